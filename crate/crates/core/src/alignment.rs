//! Prototype alignment: feature-space mixup, class prototypes, and a
//! two-layer rectifier projector trained to map each known-class feature onto
//! its class prototype under a mean-squared-error loss.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Beta, Distribution, Normal};

use crate::config::RunConfig;
use crate::context::{check_divergence, EpochRecord, TrainLog};
use crate::dataset::{split_batches_for_epoch, EmbeddingDataset};
use crate::numkit::{axpy, AdamState, Matrix};
use crate::rng::{self, tags};
use crate::{Error, Result};

/// Mixing coefficient source for [`mixup_augment`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MixCoefficient {
    /// `lambda ~ Beta(alpha, alpha)`.
    Beta(f64),
    /// Every synthetic sample uses this `lambda`.
    Fixed(f64),
}

/// Recipe of one synthetic row: `lambda * row[a] + (1 - lambda) * row[b]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixOrigin {
    pub a: usize,
    pub b: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    /// Original rows first, in input order, then synthetic rows class by class.
    pub dataset: EmbeddingDataset,
    /// `None` for original rows.
    pub origins: Vec<Option<MixOrigin>>,
}

impl Augmented {
    pub fn synthetic_count(&self) -> usize {
        self.origins.iter().filter(|o| o.is_some()).count()
    }
}

/// Adds `per_class` same-label convex combinations to every class.
pub fn mixup_augment(
    ds: &EmbeddingDataset,
    per_class: usize,
    coefficient: MixCoefficient,
    seed: u64,
) -> Result<Augmented> {
    match coefficient {
        MixCoefficient::Beta(alpha) if !(alpha > 0.0 && alpha.is_finite()) => {
            return Err(Error::Config(format!(
                "mixup alpha must be positive, got {alpha}"
            )))
        }
        MixCoefficient::Fixed(l) if !(0.0..=1.0).contains(&l) => {
            return Err(Error::Config(format!(
                "mixup lambda must lie in [0, 1], got {l}"
            )))
        }
        _ => {}
    }
    let by_class = ds.indices_by_class();
    if per_class > 0 {
        if let Some(c) = by_class.iter().position(|rows| rows.len() < 2) {
            return Err(Error::Infeasible(format!(
                "class {c} ({:?}) needs at least 2 samples for mixup",
                ds.class_names()[c]
            )));
        }
    }

    let d = ds.dim();
    let mut data = ds.vectors().as_slice().to_vec();
    let mut labels = ds.labels().to_vec();
    let mut origins = vec![None; ds.len()];
    let mut rng = rng::stream(seed, tags::MIXUP, 0);
    let beta = match coefficient {
        MixCoefficient::Beta(alpha) => {
            Some(Beta::new(alpha, alpha).map_err(|e| Error::Config(format!("{e}")))?)
        }
        MixCoefficient::Fixed(_) => None,
    };

    for (class, rows) in by_class.iter().enumerate() {
        for _ in 0..per_class {
            let ia = rng.random_range(0..rows.len());
            let mut ib = rng.random_range(0..rows.len() - 1);
            if ib >= ia {
                ib += 1;
            }
            let (a, b) = (rows[ia], rows[ib]);
            let lambda = match (&beta, coefficient) {
                (Some(dist), _) => dist.sample(&mut rng),
                (None, MixCoefficient::Fixed(l)) => l,
                (None, MixCoefficient::Beta(_)) => unreachable!(),
            };
            data.extend(
                ds.vector(a)
                    .iter()
                    .zip(ds.vector(b))
                    .map(|(x, y)| lambda * x + (1.0 - lambda) * y),
            );
            labels.push(class as u32);
            origins.push(Some(MixOrigin { a, b, lambda }));
        }
    }
    let vectors = Matrix::from_vec(labels.len(), d, data)?;
    let dataset = EmbeddingDataset::new(vectors, labels, ds.class_names().to_vec(), ds.view())?;
    Ok(Augmented { dataset, origins })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    prototypes: Matrix,
    counts: Vec<usize>,
}

impl PrototypeBank {
    pub fn from_parts(prototypes: Matrix, counts: Vec<usize>) -> Result<Self> {
        if counts.len() != prototypes.rows() {
            return Err(Error::dim(
                "prototype count",
                prototypes.rows(),
                counts.len(),
            ));
        }
        if !prototypes.is_finite() {
            return Err(Error::Validation("non-finite class prototype".into()));
        }
        Ok(PrototypeBank { prototypes, counts })
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

    pub fn prototype(&self, class: usize) -> &[f64] {
        self.prototypes.row(class)
    }

    pub fn prototypes(&self) -> &Matrix {
        &self.prototypes
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }
}

/// Per-class mean of every row.
pub fn compute_prototypes(ds: &EmbeddingDataset) -> Result<PrototypeBank> {
    let c = ds.num_classes();
    if c == 0 {
        return Err(Error::Infeasible(
            "no classes to build prototypes from".into(),
        ));
    }
    let mut sums = Matrix::zeros(c, ds.dim());
    let mut counts = vec![0usize; c];
    for i in 0..ds.len() {
        let l = ds.label(i) as usize;
        counts[l] += 1;
        axpy(1.0, ds.vector(i), sums.row_mut(l));
    }
    if let Some(empty) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Infeasible(format!("class {empty} has no samples")));
    }
    for (l, &n) in counts.iter().enumerate() {
        for v in sums.row_mut(l) {
            *v /= n as f64;
        }
    }
    PrototypeBank::from_parts(sums, counts)
}

/// `R(f) = W2 relu(W1 f + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

pub type ProjectorGradients = Projector;

impl Projector {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Projector {
            w1: Matrix::zeros(hidden, dim),
            b1: vec![0.0; hidden],
            w2: Matrix::zeros(dim, hidden),
            b2: vec![0.0; dim],
        }
    }

    /// Both layers start at the (rectangular) identity plus N(0, (0.01/sqrt(d))^2) noise; biases zero.
    pub fn initialized(dim: usize, hidden: usize, seed: u64) -> Self {
        let mut p = Projector::zeros(dim, hidden);
        let mut rng = rng::stream(seed, tags::PROJECTOR_INIT, 0);
        let noise = Normal::new(0.0, 0.01 / libm::sqrt(dim.max(1) as f64)).expect("finite sigma");
        for m in [&mut p.w1, &mut p.w2] {
            for r in 0..m.rows() {
                for c in 0..m.cols() {
                    let base = if r == c { 1.0 } else { 0.0 };
                    m.set(r, c, base + noise.sample(&mut rng));
                }
            }
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let (d, h) = (self.dim(), self.hidden());
        if self.b1.len() != h || self.w2.rows() != d || self.w2.cols() != h || self.b2.len() != d {
            return Err(Error::Validation(
                "projector tensors have inconsistent shapes".into(),
            ));
        }
        if !self.is_finite() {
            return Err(Error::Validation("non-finite projector parameter".into()));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.w1.is_finite()
            && self.w2.is_finite()
            && self.b1.iter().chain(&self.b2).all(|x| x.is_finite())
    }

    pub fn num_params(&self) -> usize {
        self.w1.as_slice().len() + self.b1.len() + self.w2.as_slice().len() + self.b2.len()
    }

    /// Parameters flattened as `w1 | b1 | w2 | b2`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend_from_slice(self.w1.as_slice());
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(self.w2.as_slice());
        v.extend_from_slice(&self.b2);
        v
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::dim(
                "flat projector parameters",
                self.num_params(),
                flat.len(),
            ));
        }
        let mut rest = flat;
        for dst in [
            self.w1.as_mut_slice(),
            &mut self.b1[..],
            self.w2.as_mut_slice(),
            &mut self.b2[..],
        ] {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    fn hidden_pre(&self, f: &[f64]) -> Result<Vec<f64>> {
        let mut pre = self.w1.matvec(f)?;
        axpy(1.0, &self.b1, &mut pre);
        Ok(pre)
    }

    pub fn forward(&self, f: &[f64]) -> Result<Vec<f64>> {
        let act: Vec<f64> = self
            .hidden_pre(f)?
            .into_iter()
            .map(|x| x.max(0.0))
            .collect();
        let mut out = self.w2.matvec(&act)?;
        axpy(1.0, &self.b2, &mut out);
        Ok(out)
    }
}

/// Mean over batch and coordinates of `(R(f) - u_label)^2`, with gradients for every projector tensor.
pub fn alignment_loss(
    features: &[&[f64]],
    labels: &[u32],
    bank: &PrototypeBank,
    proj: &Projector,
) -> Result<(f64, ProjectorGradients)> {
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
    let d = proj.dim();
    if bank.dim() != d {
        return Err(Error::dim("prototype dimension", d, bank.dim()));
    }
    let scale = 2.0 / (features.len() * d) as f64;
    let mut grads = Projector::zeros(d, proj.hidden());
    let mut total = 0.0;

    for (&f, &y) in features.iter().zip(labels) {
        let y = y as usize;
        if y >= bank.len() {
            return Err(Error::Validation(format!("label {y} has no prototype")));
        }
        let pre = proj.hidden_pre(f)?;
        let act: Vec<f64> = pre.iter().map(|&x| x.max(0.0)).collect();
        let mut out = proj.w2.matvec(&act)?;
        axpy(1.0, &proj.b2, &mut out);

        let mut g_out = out;
        axpy(-1.0, bank.prototype(y), &mut g_out);
        total += g_out.iter().map(|r| r * r).sum::<f64>();
        for g in &mut g_out {
            *g *= scale;
        }

        grads.w2.add_outer(1.0, &g_out, &act);
        axpy(1.0, &g_out, &mut grads.b2);
        let mut g_hidden = proj.w2.matvec_t(&g_out)?;
        for (g, &p) in g_hidden.iter_mut().zip(&pre) {
            if p <= 0.0 {
                *g = 0.0;
            }
        }
        grads.w1.add_outer(1.0, &g_hidden, f);
        axpy(1.0, &g_hidden, &mut grads.b1);
    }

    let loss = total / (features.len() * d) as f64;
    if !loss.is_finite() {
        return Err(Error::PoisonedGradient("alignment loss"));
    }
    Ok((loss, grads))
}

/// Mixup, prototypes over the augmented set, then Adam on the alignment loss.
pub fn train_pa(
    ds: &EmbeddingDataset,
    config: &RunConfig,
    seed: u64,
) -> Result<(Projector, PrototypeBank, TrainLog)> {
    if ds.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    let per_class = config.mixup_factor * ds.len() / ds.num_classes().max(1);
    let augmented = mixup_augment(
        ds,
        per_class,
        MixCoefficient::Beta(config.mixup_alpha),
        seed,
    )?
    .dataset;
    let bank = compute_prototypes(&augmented)?;
    let d = ds.dim();
    let mut proj = Projector::initialized(d, d, seed);
    let mut log = TrainLog::default();
    if config.epochs == 0 {
        return Ok((proj, bank, log));
    }
    config.validate()?;

    let sizes = [
        proj.w1.as_slice().len(),
        proj.b1.len(),
        proj.w2.as_slice().len(),
        proj.b2.len(),
    ];
    let mut opt = AdamState::new(&sizes, config.lr_main, config.weight_decay);
    let mut initial = None;
    for epoch in 0..config.epochs {
        let lr = config.lr_at(config.lr_main, epoch);
        opt.lr = lr;
        let mut loss_sum = 0.0;
        for batch in split_batches_for_epoch(augmented.len(), config.batch_size, seed, epoch as u64)
        {
            let features: Vec<&[f64]> = batch.iter().map(|&i| augmented.vector(i)).collect();
            let labels: Vec<u32> = batch.iter().map(|&i| augmented.label(i)).collect();
            let (loss, g) = alignment_loss(&features, &labels, &bank, &proj)?;
            let initial = *initial.get_or_insert(loss);
            check_divergence(initial, loss, epoch, &log)?;
            loss_sum += loss * batch.len() as f64;
            let Projector { w1, b1, w2, b2 } = &mut proj;
            opt.step(
                &mut [w1.as_mut_slice(), b1, w2.as_mut_slice(), b2],
                &[g.w1.as_slice(), &g.b1, g.w2.as_slice(), &g.b2],
            )?;
        }
        if !proj.is_finite() {
            return Err(Error::PoisonedGradient("projector parameters"));
        }
        log.epochs.push(EpochRecord {
            epoch,
            stage: 1,
            lr,
            mean_loss: loss_sum / augmented.len() as f64,
            train_accuracy: None,
        });
    }
    Ok((proj, bank, log))
}
