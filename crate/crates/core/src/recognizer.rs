//! Threshold-gated open-set routing, the fallback classifier for rejected
//! samples, accuracy metrics, and threshold sweeps.
//!
//! For each sample the closed-set head predicts a label; the projector output
//! is compared with that label's prototype by cosine similarity `s`. The
//! [`Comparator`] turns `(s, T)` into known/unknown. Known samples keep the
//! closed-set label; unknown ones are answered by a [`Fallback`].

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::alignment::{Projector, PrototypeBank};
use crate::context::{ClosedSetPredictor, ContextDictionary, FusionHead};
use crate::numkit::{cosine_similarity, Matrix};
use crate::{Error, Result};

/// Direction of the threshold test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Comparator {
    /// `s > T` means known.
    #[default]
    SimAboveKnown,
    /// `s > T` means unknown.
    SimAboveUnknown,
}

impl Comparator {
    /// A non-finite similarity is never known.
    pub fn is_known(self, similarity: f64, threshold: f64) -> bool {
        if !similarity.is_finite() {
            return false;
        }
        match self {
            Comparator::SimAboveKnown => similarity > threshold,
            Comparator::SimAboveUnknown => similarity <= threshold,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Comparator::SimAboveKnown => "sim-above-known",
            Comparator::SimAboveUnknown => "sim-above-unknown",
        }
    }

    /// Sorts thresholds from liberal to conservative at flagging unknowns.
    ///
    /// Under `SimAboveKnown` a lower `T` accepts more samples as known, so
    /// conservative means descending; under `SimAboveUnknown`, ascending.
    pub fn conservative_order(self, thresholds: &mut [f64]) {
        match self {
            Comparator::SimAboveKnown => thresholds.sort_by(|a, b| b.total_cmp(a)),
            Comparator::SimAboveUnknown => thresholds.sort_by(f64::total_cmp),
        }
    }
}

impl fmt::Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Comparator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sim-above-known" => Ok(Comparator::SimAboveKnown),
            "sim-above-unknown" => Ok(Comparator::SimAboveUnknown),
            other => Err(Error::Config(format!("unknown comparator {other:?}"))),
        }
    }
}

/// What counts as a correct answer on an unknown-class sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum OpenMetric {
    /// Routed to the fallback.
    #[default]
    Detection,
    /// Routed to the fallback and given the right fallback label.
    EndToEnd,
}

impl OpenMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            OpenMetric::Detection => "detection",
            OpenMetric::EndToEnd => "end-to-end",
        }
    }
}

impl fmt::Display for OpenMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OpenMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "detection" => Ok(OpenMetric::Detection),
            "end-to-end" => Ok(OpenMetric::EndToEnd),
            other => Err(Error::Config(format!("unknown open-set metric {other:?}"))),
        }
    }
}

/// Classifier consulted for samples judged unknown.
pub trait Fallback {
    /// Index into the fallback vocabulary, or `None` for the open-set tag.
    fn predict(&self, f: &[f64]) -> Result<Option<usize>>;
}

/// Always answers with the open-set tag.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullFallback;

impl Fallback for NullFallback {
    fn predict(&self, _f: &[f64]) -> Result<Option<usize>> {
        Ok(None)
    }
}

/// Nearest prototype by cosine similarity over an open vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct FallbackModel {
    prototypes: Matrix,
    class_names: Vec<String>,
}

impl FallbackModel {
    pub fn new(prototypes: Matrix, class_names: Vec<String>) -> Result<Self> {
        if prototypes.rows() == 0 {
            return Err(Error::Validation(
                "fallback model needs at least one row".into(),
            ));
        }
        if class_names.len() != prototypes.rows() {
            return Err(Error::dim(
                "fallback class names",
                prototypes.rows(),
                class_names.len(),
            ));
        }
        if !prototypes.is_finite() {
            return Err(Error::Validation("non-finite fallback prototype".into()));
        }
        Ok(FallbackModel {
            prototypes,
            class_names,
        })
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn dim(&self) -> usize {
        self.prototypes.cols()
    }
}

/// Row of `fb` most cosine-similar to `f`; lowest index on ties.
///
/// Rows with zero norm never win.
pub fn fallback_predict(f: &[f64], fb: &FallbackModel) -> Result<usize> {
    if f.len() != fb.dim() {
        return Err(Error::dim("fallback feature length", fb.dim(), f.len()));
    }
    let mut best: Option<(f64, usize)> = None;
    for (i, row) in fb.prototypes.iter_rows().enumerate() {
        let s = match cosine_similarity(f, row) {
            Ok(s) => s,
            Err(Error::UndefinedSimilarity) if crate::numkit::norm(f) > 0.0 => continue,
            Err(e) => return Err(e),
        };
        if best.is_none_or(|(b, _)| s > b) {
            best = Some((s, i));
        }
    }
    best.map(|(_, i)| i).ok_or(Error::UndefinedSimilarity)
}

impl Fallback for FallbackModel {
    fn predict(&self, f: &[f64]) -> Result<Option<usize>> {
        fallback_predict(f, self).map(Some)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    ClosedHead,
    Fallback,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::ClosedHead => "closed_head",
            Source::Fallback => "fallback",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FinalLabel {
    /// Known class id from the closed-set head.
    Known(u32),
    /// Index into the fallback vocabulary.
    Fallback(usize),
    /// Unknown with no fallback answer.
    OpenSet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub index: usize,
    pub csr_label: u32,
    /// `NaN` when the projected feature has zero norm.
    pub similarity: f64,
    pub is_known: bool,
    pub final_label: FinalLabel,
    pub source: Source,
}

/// Every trained model needed to route a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub dict: ContextDictionary,
    pub head: FusionHead,
    pub projector: Projector,
    pub bank: PrototypeBank,
}

/// Threshold-free part of a decision, reusable across thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub csr_label: u32,
    pub similarity: f64,
    pub fallback: Option<usize>,
}

impl Scored {
    pub fn route(&self, index: usize, threshold: f64, comparator: Comparator) -> Decision {
        let is_known = comparator.is_known(self.similarity, threshold);
        let (final_label, source) = if is_known {
            (FinalLabel::Known(self.csr_label), Source::ClosedHead)
        } else {
            (
                self.fallback
                    .map_or(FinalLabel::OpenSet, FinalLabel::Fallback),
                Source::Fallback,
            )
        };
        Decision {
            index,
            csr_label: self.csr_label,
            similarity: self.similarity,
            is_known,
            final_label,
            source,
        }
    }
}

/// Compatibility-checked view over a [`Pipeline`] for scoring many samples.
pub struct Scorer<'a> {
    pipeline: &'a Pipeline,
    closed: ClosedSetPredictor<'a>,
}

impl<'a> Scorer<'a> {
    pub fn new(pipeline: &'a Pipeline) -> Result<Self> {
        let d = pipeline.head.dim();
        pipeline.projector.validate()?;
        if pipeline.projector.dim() != d {
            return Err(Error::dim(
                "projector dimension",
                d,
                pipeline.projector.dim(),
            ));
        }
        if pipeline.bank.dim() != d {
            return Err(Error::dim("prototype dimension", d, pipeline.bank.dim()));
        }
        if pipeline.bank.len() != pipeline.head.num_classes() {
            return Err(Error::dim(
                "prototype count",
                pipeline.head.num_classes(),
                pipeline.bank.len(),
            ));
        }
        Ok(Scorer {
            pipeline,
            closed: ClosedSetPredictor::new(&pipeline.dict, &pipeline.head)?,
        })
    }

    /// Closed-set label and similarity score, without routing.
    pub fn score(&self, f: &[f64]) -> Result<(u32, f64)> {
        let (label, _) = self.closed.predict(f)?;
        let projected = self.pipeline.projector.forward(f)?;
        let s = match cosine_similarity(&projected, self.pipeline.bank.prototype(label as usize)) {
            Ok(s) => s,
            Err(Error::UndefinedSimilarity) => f64::NAN,
            Err(e) => return Err(e),
        };
        Ok((label, s))
    }

    pub fn score_with_fallback(&self, f: &[f64], fallback: &dyn Fallback) -> Result<Scored> {
        let (csr_label, similarity) = self.score(f)?;
        let fallback = match fallback.predict(f) {
            Ok(p) => p,
            Err(Error::UndefinedSimilarity) => None,
            Err(e) => return Err(e),
        };
        Ok(Scored {
            csr_label,
            similarity,
            fallback,
        })
    }
}

/// Routes one sample.
pub fn decide(
    f: &[f64],
    pipeline: &Pipeline,
    threshold: f64,
    comparator: Comparator,
    fallback: &dyn Fallback,
) -> Result<Decision> {
    Ok(Scorer::new(pipeline)?
        .score_with_fallback(f, fallback)?
        .route(0, threshold, comparator))
}

/// Ground truth of an evaluation sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truth {
    Known {
        class: u32,
        /// Same class in the fallback vocabulary, if present there.
        fallback_class: Option<usize>,
    },
    Unknown {
        fallback_class: Option<usize>,
    },
}

impl Truth {
    pub fn is_known(&self) -> bool {
        matches!(self, Truth::Known { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub threshold: f64,
    pub comparator: Comparator,
    pub open_metric: OpenMetric,
    pub n_samples: usize,
    pub n_known: usize,
    pub n_unknown: usize,
    /// Correct answers over known-class samples.
    pub closed_accuracy: f64,
    /// Correct handling of unknown-class samples, per `open_metric`.
    pub open_accuracy: f64,
    /// Correct answers over all samples.
    pub overall_accuracy: f64,
    pub known_as_known: usize,
    pub known_as_unknown: usize,
    pub unknown_as_known: usize,
    pub unknown_as_unknown: usize,
}

impl EvalReport {
    pub fn n_known_routed(&self) -> usize {
        self.known_as_known + self.unknown_as_known
    }

    pub fn n_unknown_routed(&self) -> usize {
        self.known_as_unknown + self.unknown_as_unknown
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn is_correct(decision: &Decision, truth: &Truth, metric: OpenMetric) -> bool {
    match (*truth, decision.final_label) {
        (Truth::Known { class, .. }, FinalLabel::Known(l)) => l == class,
        (Truth::Known { fallback_class, .. }, FinalLabel::Fallback(l)) => fallback_class == Some(l),
        (Truth::Known { .. }, FinalLabel::OpenSet) => false,
        (Truth::Unknown { .. }, FinalLabel::Known(_)) => false,
        (Truth::Unknown { fallback_class }, label) => match metric {
            OpenMetric::Detection => true,
            OpenMetric::EndToEnd => {
                matches!(label, FinalLabel::Fallback(l) if fallback_class == Some(l))
            }
        },
    }
}

/// Aggregates routed decisions against ground truth.
pub fn summarize(
    decisions: &[Decision],
    truths: &[Truth],
    threshold: f64,
    comparator: Comparator,
    open_metric: OpenMetric,
) -> Result<EvalReport> {
    if decisions.len() != truths.len() {
        return Err(Error::dim(
            "ground-truth count",
            decisions.len(),
            truths.len(),
        ));
    }
    let mut r = EvalReport {
        threshold,
        comparator,
        open_metric,
        n_samples: decisions.len(),
        n_known: 0,
        n_unknown: 0,
        closed_accuracy: 0.0,
        open_accuracy: 0.0,
        overall_accuracy: 0.0,
        known_as_known: 0,
        known_as_unknown: 0,
        unknown_as_known: 0,
        unknown_as_unknown: 0,
    };
    let (mut closed_ok, mut open_ok) = (0, 0);
    for (d, t) in decisions.iter().zip(truths) {
        let ok = is_correct(d, t, open_metric);
        match (t.is_known(), d.is_known) {
            (true, true) => r.known_as_known += 1,
            (true, false) => r.known_as_unknown += 1,
            (false, true) => r.unknown_as_known += 1,
            (false, false) => r.unknown_as_unknown += 1,
        }
        if t.is_known() {
            r.n_known += 1;
            closed_ok += ok as usize;
        } else {
            r.n_unknown += 1;
            open_ok += ok as usize;
        }
    }
    r.closed_accuracy = ratio(closed_ok, r.n_known);
    r.open_accuracy = ratio(open_ok, r.n_unknown);
    r.overall_accuracy = ratio(closed_ok + open_ok, r.n_samples);
    Ok(r)
}

/// Scores every row of `vectors` once.
pub fn score_all(
    vectors: &Matrix,
    pipeline: &Pipeline,
    fallback: &dyn Fallback,
) -> Result<Vec<Scored>> {
    let scorer = Scorer::new(pipeline)?;
    vectors
        .iter_rows()
        .map(|f| scorer.score_with_fallback(f, fallback))
        .collect()
}

pub fn route_all(scored: &[Scored], threshold: f64, comparator: Comparator) -> Vec<Decision> {
    scored
        .iter()
        .enumerate()
        .map(|(i, s)| s.route(i, threshold, comparator))
        .collect()
}

/// Routes and scores every sample at one threshold.
pub fn evaluate(
    vectors: &Matrix,
    truths: &[Truth],
    pipeline: &Pipeline,
    fallback: &dyn Fallback,
    threshold: f64,
    comparator: Comparator,
    open_metric: OpenMetric,
) -> Result<EvalReport> {
    let scored = score_all(vectors, pipeline, fallback)?;
    summarize(
        &route_all(&scored, threshold, comparator),
        truths,
        threshold,
        comparator,
        open_metric,
    )
}

/// [`evaluate`] at each threshold, in the given order.
pub fn sweep_threshold(
    vectors: &Matrix,
    truths: &[Truth],
    pipeline: &Pipeline,
    fallback: &dyn Fallback,
    thresholds: &[f64],
    comparator: Comparator,
    open_metric: OpenMetric,
) -> Result<Vec<EvalReport>> {
    if thresholds.is_empty() {
        return Err(Error::Config("threshold list is empty".into()));
    }
    let scored = score_all(vectors, pipeline, fallback)?;
    thresholds
        .iter()
        .map(|&t| {
            summarize(
                &route_all(&scored, t, comparator),
                truths,
                t,
                comparator,
                open_metric,
            )
        })
        .collect()
}

/// Area under the ROC curve for separating `positives` (expected higher) from
/// `negatives`; ties count one half. Non-finite scores rank lowest.
pub fn auroc(positives: &[f64], negatives: &[f64]) -> f64 {
    if positives.is_empty() || negatives.is_empty() {
        return f64::NAN;
    }
    let key = |x: f64| if x.is_finite() { x } else { f64::NEG_INFINITY };
    let mut wins = 0.0;
    for &p in positives {
        for &n in negatives {
            let (p, n) = (key(p), key(n));
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (positives.len() * negatives.len()) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fb(rows: &[&[f64]]) -> FallbackModel {
        let names = (0..rows.len()).map(|i| format!("f{i}")).collect();
        FallbackModel::new(
            Matrix::from_rows(rows[0].len(), rows.iter().copied()).unwrap(),
            names,
        )
        .unwrap()
    }

    #[test]
    fn comparator_directions() {
        assert!(Comparator::SimAboveKnown.is_known(0.6, 0.5));
        assert!(!Comparator::SimAboveKnown.is_known(0.5, 0.5));
        assert!(!Comparator::SimAboveUnknown.is_known(0.6, 0.5));
        assert!(Comparator::SimAboveUnknown.is_known(0.5, 0.5));
        assert!(!Comparator::SimAboveKnown.is_known(f64::NAN, -2.0));
        assert!(!Comparator::SimAboveUnknown.is_known(f64::NAN, 2.0));
        for c in [Comparator::SimAboveKnown, Comparator::SimAboveUnknown] {
            assert_eq!(c.as_str().parse::<Comparator>().unwrap(), c);
        }
        assert!("above".parse::<Comparator>().is_err());
    }

    #[test]
    fn fallback_cases() {
        let m = fb(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, 1.0]]);
        assert_eq!(fallback_predict(&[0.0, 3.0], &m).unwrap(), 1);
        assert_eq!(fallback_predict(&[1.0, 0.0], &m).unwrap(), 0);
        assert_eq!(
            fallback_predict(&[0.0, 0.0], &m),
            Err(Error::UndefinedSimilarity)
        );
        assert!(fallback_predict(&[1.0], &m).is_err());
        let with_zero = fb(&[&[0.0, 0.0], &[-1.0, 0.0]]);
        assert_eq!(fallback_predict(&[1.0, 1.0], &with_zero).unwrap(), 1);
    }

    #[test]
    fn auroc_extremes() {
        assert_eq!(auroc(&[0.9, 0.8], &[0.1, 0.2]), 1.0);
        assert_eq!(auroc(&[0.1], &[0.9]), 0.0);
        assert_eq!(auroc(&[0.5], &[0.5]), 0.5);
        assert_eq!(auroc(&[f64::NAN], &[0.0]), 0.0);
    }

    #[test]
    fn summarize_counts_partition() {
        let scored = [
            Scored {
                csr_label: 0,
                similarity: 0.9,
                fallback: Some(0),
            },
            Scored {
                csr_label: 1,
                similarity: 0.2,
                fallback: Some(2),
            },
            Scored {
                csr_label: 1,
                similarity: f64::NAN,
                fallback: Some(3),
            },
        ];
        let truths = [
            Truth::Known {
                class: 0,
                fallback_class: Some(0),
            },
            Truth::Unknown {
                fallback_class: Some(2),
            },
            Truth::Unknown {
                fallback_class: Some(2),
            },
        ];
        let decisions = route_all(&scored, 0.5, Comparator::SimAboveKnown);
        assert!(decisions
            .iter()
            .all(|d| (d.source == Source::ClosedHead) == d.is_known));
        let r = summarize(
            &decisions,
            &truths,
            0.5,
            Comparator::SimAboveKnown,
            OpenMetric::Detection,
        )
        .unwrap();
        assert_eq!(
            (
                r.known_as_known,
                r.unknown_as_unknown,
                r.n_known_routed(),
                r.n_unknown_routed()
            ),
            (1, 2, 1, 2)
        );
        assert_eq!(
            (r.closed_accuracy, r.open_accuracy, r.overall_accuracy),
            (1.0, 1.0, 1.0)
        );
        let e2e = summarize(
            &decisions,
            &truths,
            0.5,
            Comparator::SimAboveKnown,
            OpenMetric::EndToEnd,
        )
        .unwrap();
        assert_eq!(e2e.open_accuracy, 0.5);
        assert!((e2e.overall_accuracy - 2.0 / 3.0).abs() < 1e-15);
    }
}
