//! Run configuration shared by every pipeline stage.

use alloc::format;
use alloc::string::{String, ToString};
use core::fmt::Write;
use core::str::FromStr;

use crate::recognizer::{Comparator, OpenMetric};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Representatives kept per class.
    pub k: usize,
    /// Number of context prototypes.
    pub beta: usize,
    /// Side of the zeroed center square, in pixels.
    pub gamma: usize,
    pub threshold: f64,
    pub comparator: Comparator,
    pub open_metric: OpenMetric,
    pub lr_main: f64,
    pub lr_classifier: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Leading epochs that train only the classifier of the fusion head.
    pub stage1_epochs: usize,
    /// Learning rates are multiplied by `lr_decay_factor` from this (0-based) epoch on.
    pub lr_decay_epoch: usize,
    pub lr_decay_factor: f64,
    pub mixup_alpha: f64,
    /// Synthetic mixup samples per class, as a multiple of the class's original count.
    pub mixup_factor: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            k: 4,
            beta: 32,
            gamma: 96,
            threshold: 0.0022,
            comparator: Comparator::SimAboveKnown,
            open_metric: OpenMetric::Detection,
            lr_main: 5e-5,
            lr_classifier: 1e-4,
            batch_size: 32,
            weight_decay: 1e-5,
            epochs: 17,
            stage1_epochs: 4,
            lr_decay_epoch: 8,
            lr_decay_factor: 0.1,
            mixup_alpha: 0.4,
            mixup_factor: 4,
            seed: 0,
        }
    }
}

/// Field names in canonical order.
pub const FIELDS: &[&str] = &[
    "k",
    "beta",
    "gamma",
    "threshold",
    "comparator",
    "open_metric",
    "lr_main",
    "lr_classifier",
    "batch_size",
    "weight_decay",
    "epochs",
    "stage1_epochs",
    "lr_decay_epoch",
    "lr_decay_factor",
    "mixup_alpha",
    "mixup_factor",
    "seed",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {key}={value:?}")))
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.k < 1 {
            return bad("k must be >= 1");
        }
        if self.beta < 1 {
            return bad("beta must be >= 1");
        }
        if self.gamma < 1 {
            return bad("gamma must be >= 1");
        }
        if !(self.lr_main > 0.0 && self.lr_main.is_finite())
            || !(self.lr_classifier > 0.0 && self.lr_classifier.is_finite())
        {
            return bad("learning rates must be positive and finite");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        if self.epochs < 1 {
            return bad("epochs must be >= 1");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be >= 0");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor.is_finite()) {
            return bad("lr_decay_factor must be positive");
        }
        if !(self.mixup_alpha > 0.0 && self.mixup_alpha.is_finite()) {
            return bad("mixup_alpha must be positive");
        }
        if !self.threshold.is_finite() {
            return bad("threshold must be finite");
        }
        Ok(())
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "k" => self.k = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "threshold" => self.threshold = parse(key, value)?,
            "comparator" => self.comparator = parse(key, value)?,
            "open_metric" => self.open_metric = parse(key, value)?,
            "lr_main" => self.lr_main = parse(key, value)?,
            "lr_classifier" => self.lr_classifier = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "stage1_epochs" => self.stage1_epochs = parse(key, value)?,
            "lr_decay_epoch" => self.lr_decay_epoch = parse(key, value)?,
            "lr_decay_factor" => self.lr_decay_factor = parse(key, value)?,
            "mixup_alpha" => self.mixup_alpha = parse(key, value)?,
            "mixup_factor" => self.mixup_factor = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses flat `key = value` text. `#` starts a comment; blank lines are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    /// Canonical `key=value` rendering, one field per line in [`FIELDS`] order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        // f64 Display is the shortest exact round-trip form
        let _ = write!(
            s,
            "k={}\nbeta={}\ngamma={}\nthreshold={}\ncomparator={}\nopen_metric={}\nlr_main={}\nlr_classifier={}\n\
             batch_size={}\nweight_decay={}\nepochs={}\nstage1_epochs={}\nlr_decay_epoch={}\nlr_decay_factor={}\n\
             mixup_alpha={}\nmixup_factor={}\nseed={}\n",
            self.k,
            self.beta,
            self.gamma,
            self.threshold,
            self.comparator,
            self.open_metric,
            self.lr_main,
            self.lr_classifier,
            self.batch_size,
            self.weight_decay,
            self.epochs,
            self.stage1_epochs,
            self.lr_decay_epoch,
            self.lr_decay_factor,
            self.mixup_alpha,
            self.mixup_factor,
            self.seed,
        );
        s
    }

    /// Learning rate in effect at a 0-based epoch for a stage's base rate.
    pub fn lr_at(&self, base: f64, epoch: usize) -> f64 {
        if epoch >= self.lr_decay_epoch {
            base * self.lr_decay_factor
        } else {
            base
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(
            (c.lr_main, c.lr_classifier, c.batch_size, c.weight_decay),
            (5e-5, 1e-4, 32, 1e-5)
        );
        assert_eq!(
            (c.epochs, c.lr_decay_epoch, c.lr_decay_factor, c.k),
            (17, 8, 0.1, 4)
        );
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.apply_text(
            "# run\nk = 3\nthreshold=0.125  # tuned\n\ncomparator=sim-above-unknown\nseed=99\n",
        )
        .unwrap();
        assert_eq!((c.k, c.threshold, c.seed), (3, 0.125, 99));
        assert_eq!(c.comparator, Comparator::SimAboveUnknown);
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.to_text().lines().count(), FIELDS.len());
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        let mut c = RunConfig::default();
        assert!(c.apply_text("colour=blue").is_err());
        assert!(c.apply_text("k").is_err());
        assert!(c.set("k", "four").is_err());
        c.set("batch_size", "0").unwrap();
        assert_eq!(c.validate().unwrap_err().kind(), crate::ErrorKind::Config);
    }

    #[test]
    fn lr_decays_from_configured_epoch() {
        let c = RunConfig::default();
        assert_eq!(c.lr_at(5e-5, 7), 5e-5);
        assert_eq!(c.lr_at(5e-5, 8), 5e-5 * 0.1);
    }
}
