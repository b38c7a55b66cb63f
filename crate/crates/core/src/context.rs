//! Context-prototype dictionary, attention fusion head, and its two-stage
//! cross-entropy training.
//!
//! A sample feature `f` is enriched with the dictionary of context prototypes
//! `z_1..z_b` (means of k-means groups over masked-image features):
//!
//! ```text
//! s_i     = (W_q f) . (W_k z_i) / sqrt(d)
//! lambda  = softmax(s)
//! f_fuse  = f + sum_i lambda_i * P(z_i) * z_i
//! logits  = W_c f_fuse + b
//! ```
//!
//! where `P(z_i)` is the fraction of context features in group `i`. The
//! dictionary is fixed after construction; `W_q`, `W_k`, `W_c`, `b` are
//! trained with hand-derived gradients.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};

use crate::clustering::{kmeans, KMeansOptions};
use crate::config::RunConfig;
use crate::dataset::{split_batches_for_epoch, EmbeddingDataset};
use crate::numkit::{argmax, axpy, dot, log_sum_exp, softmax, AdamState, Matrix};
use crate::rng::{self, tags};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ContextDictionary {
    prototypes: Matrix,
    priors: Vec<f64>,
    group_sizes: Vec<usize>,
}

impl ContextDictionary {
    /// Builds a dictionary from explicit prototypes and group sizes.
    pub fn from_parts(prototypes: Matrix, group_sizes: Vec<usize>) -> Result<Self> {
        if prototypes.rows() == 0 {
            return Err(Error::Validation(
                "dictionary needs at least one prototype".into(),
            ));
        }
        if group_sizes.len() != prototypes.rows() {
            return Err(Error::dim(
                "dictionary group count",
                prototypes.rows(),
                group_sizes.len(),
            ));
        }
        if !prototypes.is_finite() {
            return Err(Error::Validation("non-finite context prototype".into()));
        }
        let total: usize = group_sizes.iter().sum();
        if total == 0 {
            return Err(Error::Validation("dictionary groups are all empty".into()));
        }
        let priors = group_sizes
            .iter()
            .map(|&s| s as f64 / total as f64)
            .collect();
        Ok(ContextDictionary {
            prototypes,
            priors,
            group_sizes,
        })
    }

    pub fn len(&self) -> usize {
        self.prototypes.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.prototypes.cols()
    }

    pub fn prototypes(&self) -> &Matrix {
        &self.prototypes
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.group_sizes
    }
}

/// Groups the context features into `beta` clusters and keeps their means.
pub fn build_dictionary(
    context: &EmbeddingDataset,
    beta: usize,
    seed: u64,
) -> Result<ContextDictionary> {
    if context.len() < beta {
        return Err(Error::Infeasible(format!(
            "{} context samples cannot form {beta} groups",
            context.len()
        )));
    }
    let result = kmeans(context.vectors(), beta, seed, KMeansOptions::default())?;
    ContextDictionary::from_parts(result.centroids.clone(), result.cluster_sizes())
}

/// Attention weights, fusion projection, and linear classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionHead {
    pub query: Matrix,
    pub key: Matrix,
    pub classifier: Matrix,
    pub bias: Vec<f64>,
}

/// Gradient of the loss with respect to each [`FusionHead`] tensor.
pub type HeadGradients = FusionHead;

impl FusionHead {
    pub fn zeros(dim: usize, classes: usize) -> Self {
        FusionHead {
            query: Matrix::zeros(dim, dim),
            key: Matrix::zeros(dim, dim),
            classifier: Matrix::zeros(classes, dim),
            bias: vec![0.0; classes],
        }
    }

    /// `W_q`, `W_k` = identity + N(0, (0.01/sqrt(d))^2); classifier and bias zero.
    pub fn initialized(dim: usize, classes: usize, seed: u64) -> Self {
        let mut head = FusionHead::zeros(dim, classes);
        let mut rng = rng::stream(seed, tags::HEAD_INIT, 0);
        let noise = Normal::new(0.0, 0.01 / libm::sqrt(dim.max(1) as f64)).expect("finite sigma");
        for m in [&mut head.query, &mut head.key] {
            for r in 0..dim {
                for c in 0..dim {
                    let base = if r == c { 1.0 } else { 0.0 };
                    m.set(r, c, base + noise.sample(&mut rng));
                }
            }
        }
        head
    }

    pub fn dim(&self) -> usize {
        self.query.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let c = self.num_classes();
        for (what, m, rows, cols) in [
            ("query", &self.query, d, d),
            ("key", &self.key, d, d),
            ("classifier", &self.classifier, c, d),
        ] {
            if m.rows() != rows || m.cols() != cols {
                return Err(Error::Validation(format!(
                    "{what} is {}x{}, expected {rows}x{cols}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        if c == 0 {
            return Err(Error::Validation("fusion head has no classes".into()));
        }
        if !self.is_finite() {
            return Err(Error::Validation("non-finite fusion head parameter".into()));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.query.is_finite()
            && self.key.is_finite()
            && self.classifier.is_finite()
            && self.bias.iter().all(|x| x.is_finite())
    }

    pub fn num_params(&self) -> usize {
        self.query.as_slice().len()
            + self.key.as_slice().len()
            + self.classifier.as_slice().len()
            + self.bias.len()
    }

    /// Parameters flattened as `query | key | classifier | bias`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend_from_slice(self.query.as_slice());
        v.extend_from_slice(self.key.as_slice());
        v.extend_from_slice(self.classifier.as_slice());
        v.extend_from_slice(&self.bias);
        v
    }

    /// Inverse of [`FusionHead::to_flat`] for this head's shapes.
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::dim(
                "flat head parameters",
                self.num_params(),
                flat.len(),
            ));
        }
        let mut rest = flat;
        for dst in [
            self.query.as_mut_slice(),
            self.key.as_mut_slice(),
            self.classifier.as_mut_slice(),
            &mut self.bias[..],
        ] {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    fn check_compatible(&self, dict: &ContextDictionary) -> Result<()> {
        if dict.dim() != self.dim() {
            return Err(Error::dim("dictionary dimension", self.dim(), dict.dim()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fused {
    pub features: Vec<f64>,
    pub lambdas: Vec<f64>,
}

/// Projected keys `W_k z_i`, one row per prototype.
fn project_keys(dict: &ContextDictionary, head: &FusionHead) -> Matrix {
    let d = dict.dim();
    let mut keys = Matrix::zeros(dict.len(), d);
    for (i, z) in dict.prototypes().iter_rows().enumerate() {
        keys.row_mut(i)
            .copy_from_slice(&head.key.matvec(z).expect("checked dims"));
    }
    keys
}

struct Attention {
    query: Vec<f64>,
    lambdas: Vec<f64>,
    fused: Vec<f64>,
}

fn attend(
    f: &[f64],
    dict: &ContextDictionary,
    head: &FusionHead,
    keys: &Matrix,
) -> Result<Attention> {
    let scale = 1.0 / libm::sqrt(dict.dim() as f64);
    let query = head.query.matvec(f)?;
    let scores: Vec<f64> = keys.iter_rows().map(|k| dot(&query, k) * scale).collect();
    let lambdas = softmax(&scores)?;
    let mut fused = f.to_vec();
    for ((z, &l), &p) in dict
        .prototypes()
        .iter_rows()
        .zip(&lambdas)
        .zip(dict.priors())
    {
        axpy(l * p, z, &mut fused);
    }
    Ok(Attention {
        query,
        lambdas,
        fused,
    })
}

/// Fuses context prototypes into `f`; also returns the attention weights.
pub fn fuse(f: &[f64], dict: &ContextDictionary, head: &FusionHead) -> Result<Fused> {
    head.check_compatible(dict)?;
    if f.len() != head.dim() {
        return Err(Error::dim("feature length", head.dim(), f.len()));
    }
    let keys = project_keys(dict, head);
    let a = attend(f, dict, head, &keys)?;
    Ok(Fused {
        features: a.fused,
        lambdas: a.lambdas,
    })
}

/// Closed-set label (lowest id on ties) and logits.
pub fn predict_closed(
    f: &[f64],
    dict: &ContextDictionary,
    head: &FusionHead,
) -> Result<(u32, Vec<f64>)> {
    let fused = fuse(f, dict, head)?;
    let mut logits = head.classifier.matvec(&fused.features)?;
    axpy(1.0, &head.bias, &mut logits);
    let label = argmax(&logits).expect("head has classes") as u32;
    Ok((label, logits))
}

/// Predictor that reuses the projected keys across many samples.
pub struct ClosedSetPredictor<'a> {
    dict: &'a ContextDictionary,
    head: &'a FusionHead,
    keys: Matrix,
}

impl<'a> ClosedSetPredictor<'a> {
    pub fn new(dict: &'a ContextDictionary, head: &'a FusionHead) -> Result<Self> {
        head.validate()?;
        head.check_compatible(dict)?;
        Ok(ClosedSetPredictor {
            dict,
            head,
            keys: project_keys(dict, head),
        })
    }

    pub fn predict(&self, f: &[f64]) -> Result<(u32, Vec<f64>)> {
        if f.len() != self.head.dim() {
            return Err(Error::dim("feature length", self.head.dim(), f.len()));
        }
        let a = attend(f, self.dict, self.head, &self.keys)?;
        let mut logits = self.head.classifier.matvec(&a.fused)?;
        axpy(1.0, &self.head.bias, &mut logits);
        Ok((argmax(&logits).expect("head has classes") as u32, logits))
    }
}

/// Mean cross-entropy over `(feature, label)` pairs and its gradient for every head tensor.
pub fn csr_loss(
    features: &[&[f64]],
    labels: &[u32],
    dict: &ContextDictionary,
    head: &FusionHead,
) -> Result<(f64, HeadGradients)> {
    if features.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    if features.len() != labels.len() {
        return Err(Error::dim(
            "batch label count",
            features.len(),
            labels.len(),
        ));
    }
    head.check_compatible(dict)?;
    let d = head.dim();
    let classes = head.num_classes();
    let n = features.len() as f64;
    let scale = 1.0 / libm::sqrt(d as f64);
    let keys = project_keys(dict, head);
    let mut grads = FusionHead::zeros(d, classes);
    let mut total = 0.0;

    for (&f, &y) in features.iter().zip(labels) {
        if f.len() != d {
            return Err(Error::dim("feature length", d, f.len()));
        }
        let y = y as usize;
        if y >= classes {
            return Err(Error::Validation(format!("label {y} outside 0..{classes}")));
        }
        let a = attend(f, dict, head, &keys)?;
        let mut logits = head.classifier.matvec(&a.fused)?;
        axpy(1.0, &head.bias, &mut logits);
        total += log_sum_exp(&logits) - logits[y];

        let mut g_logits = softmax(&logits)?;
        g_logits[y] -= 1.0;
        for g in &mut g_logits {
            *g /= n;
        }
        grads.classifier.add_outer(1.0, &g_logits, &a.fused);
        axpy(1.0, &g_logits, &mut grads.bias);

        // back through f_fuse = f + sum_i lambda_i P_i z_i
        let g_fused = head.classifier.matvec_t(&g_logits)?;
        let g_lambda: Vec<f64> = dict
            .prototypes()
            .iter_rows()
            .zip(dict.priors())
            .map(|(z, &p)| p * dot(z, &g_fused))
            .collect();
        let centered = dot(&a.lambdas, &g_lambda);
        let g_scores: Vec<f64> = a
            .lambdas
            .iter()
            .zip(&g_lambda)
            .map(|(l, g)| l * (g - centered))
            .collect();

        let g_query = keys.matvec_t(&g_scores)?;
        grads.query.add_outer(scale, &g_query, f);
        let z_mix = dict.prototypes().matvec_t(&g_scores)?;
        grads.key.add_outer(scale, &a.query, &z_mix);
    }

    let loss = total / n;
    if !loss.is_finite() {
        return Err(Error::PoisonedGradient("cross-entropy loss"));
    }
    Ok((loss, grads))
}

/// [`csr_loss`] over rows `batch` of `ds`.
pub fn csr_forward_loss(
    ds: &EmbeddingDataset,
    batch: &[usize],
    dict: &ContextDictionary,
    head: &FusionHead,
) -> Result<(f64, HeadGradients)> {
    let features: Vec<&[f64]> = batch.iter().map(|&i| ds.vector(i)).collect();
    let labels: Vec<u32> = batch.iter().map(|&i| ds.label(i)).collect();
    csr_loss(&features, &labels, dict, head)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 0-based global epoch.
    pub epoch: usize,
    /// 1 = classifier only, 2 = all trainable parameters.
    pub stage: u8,
    pub lr: f64,
    /// Mean loss over the epoch's batches, weighted by batch size.
    pub mean_loss: f64,
    /// Accuracy on the full training set after the epoch, when it applies.
    pub train_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

pub(crate) fn check_divergence(
    initial: f64,
    loss: f64,
    epoch: usize,
    log: &TrainLog,
) -> Result<()> {
    if initial > 0.0 && loss > 1e3 * initial {
        return Err(Error::Diverged {
            epoch,
            loss,
            log: Box::new(log.clone()),
        });
    }
    Ok(())
}

/// Fraction of rows whose closed-set prediction matches the label.
pub fn closed_set_accuracy(
    ds: &EmbeddingDataset,
    dict: &ContextDictionary,
    head: &FusionHead,
) -> Result<f64> {
    if ds.is_empty() {
        return Ok(0.0);
    }
    let predictor = ClosedSetPredictor::new(dict, head)?;
    let mut correct = 0usize;
    for i in 0..ds.len() {
        if predictor.predict(ds.vector(i))?.0 == ds.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// Two-stage training of a freshly initialized head.
///
/// Stage 1 (the first `stage1_epochs` epochs) steps only the classifier at
/// `lr_classifier`; stage 2 steps every tensor at `lr_main`. Both rates are
/// multiplied by `lr_decay_factor` from global epoch `lr_decay_epoch` on.
pub fn train_csr(
    train: &EmbeddingDataset,
    dict: &ContextDictionary,
    config: &RunConfig,
    seed: u64,
) -> Result<(FusionHead, TrainLog)> {
    let mut head = FusionHead::initialized(train.dim(), train.num_classes(), seed);
    let mut log = TrainLog::default();
    if config.epochs == 0 {
        return Ok((head, log));
    }
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    head.check_compatible(dict)?;

    let d = train.dim();
    let c = train.num_classes();
    let mut classifier_opt = AdamState::new(&[c * d, c], config.lr_classifier, config.weight_decay);
    let mut attention_opt = AdamState::new(&[d * d, d * d], config.lr_main, config.weight_decay);
    let mut initial = None;

    for epoch in 0..config.epochs {
        let stage: u8 = if epoch < config.stage1_epochs { 1 } else { 2 };
        let base = if stage == 1 {
            config.lr_classifier
        } else {
            config.lr_main
        };
        let lr = config.lr_at(base, epoch);
        classifier_opt.lr = lr;
        attention_opt.lr = lr;

        let mut loss_sum = 0.0;
        for batch in split_batches_for_epoch(train.len(), config.batch_size, seed, epoch as u64) {
            let (loss, g) = csr_forward_loss(train, &batch, dict, &head)?;
            let initial = *initial.get_or_insert(loss);
            check_divergence(initial, loss, epoch, &log)?;
            loss_sum += loss * batch.len() as f64;

            let FusionHead {
                query,
                key,
                classifier,
                bias,
            } = &mut head;
            classifier_opt.step(
                &mut [classifier.as_mut_slice(), bias],
                &[g.classifier.as_slice(), &g.bias],
            )?;
            if stage == 2 {
                attention_opt.step(
                    &mut [query.as_mut_slice(), key.as_mut_slice()],
                    &[g.query.as_slice(), g.key.as_slice()],
                )?;
            }
        }
        if !head.is_finite() {
            return Err(Error::PoisonedGradient("fusion head parameters"));
        }
        let accuracy = closed_set_accuracy(train, dict, &head)?;
        log.epochs.push(EpochRecord {
            epoch,
            stage,
            lr,
            mean_loss: loss_sum / train.len() as f64,
            train_accuracy: Some(accuracy),
        });
    }
    Ok((head, log))
}
