//! Finite-difference verification of every hand-derived gradient on random
//! small instances.

use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::alignment::{alignment_loss, Projector, PrototypeBank};
use crate::context::{csr_loss, ContextDictionary, FusionHead};
use crate::numkit::{grad_check, Matrix};
use crate::rng;

const TAG: u64 = 201;

/// Central-difference step used by the suites.
pub const EPSILON: f64 = 1e-6;

fn normal_matrix(rows: usize, cols: usize, sigma: f64, rng: &mut rng::Rng) -> Matrix {
    let n = Normal::new(0.0, sigma).expect("finite sigma");
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| n.sample(rng)).collect(),
    )
    .expect("sized")
}

/// Max relative error of the fusion-head cross-entropy gradient over
/// `instances` random problems (d <= 16, beta <= 4, C <= 5, batch <= 8).
pub fn fusion_head_suite(seed: u64, instances: usize) -> f64 {
    (0..instances)
        .map(|i| {
            let mut rng = rng::stream(seed, TAG, i as u64);
            let d = rng.random_range(2..=16);
            let beta = rng.random_range(1..=4);
            let classes = rng.random_range(2..=5);
            let batch = rng.random_range(1..=8);
            let sizes: Vec<usize> = (0..beta).map(|_| rng.random_range(1..=20)).collect();
            let dict = ContextDictionary::from_parts(normal_matrix(beta, d, 1.0, &mut rng), sizes)
                .expect("valid");
            let mut head = FusionHead::zeros(d, classes);
            let flat = normal_matrix(1, head.num_params(), 0.5, &mut rng).into_vec();
            head.load_flat(&flat).expect("sized");
            let feats = normal_matrix(batch, d, 1.0, &mut rng);
            let labels: Vec<u32> = (0..batch)
                .map(|_| rng.random_range(0..classes as u32))
                .collect();
            let rows: Vec<&[f64]> = feats.iter_rows().collect();
            grad_check(
                |p| {
                    let mut h = head.clone();
                    h.load_flat(p).expect("sized");
                    let (loss, g) = csr_loss(&rows, &labels, &dict, &h).expect("finite");
                    (loss, g.to_flat())
                },
                &flat,
                EPSILON,
            )
        })
        .fold(0.0, f64::max)
}

/// Max relative error of the projector alignment gradient over random problems.
pub fn alignment_suite(seed: u64, instances: usize) -> f64 {
    (0..instances)
        .map(|i| {
            let mut rng = rng::stream(seed, TAG + 1, i as u64);
            let d = rng.random_range(2..=16);
            let hidden = rng.random_range(2..=16);
            let classes = rng.random_range(1..=5);
            let batch = rng.random_range(1..=8);
            let bank = PrototypeBank::from_parts(
                normal_matrix(classes, d, 1.0, &mut rng),
                alloc::vec![1; classes],
            )
            .expect("valid");
            let mut proj = Projector::zeros(d, hidden);
            let flat = normal_matrix(1, proj.num_params(), 0.5, &mut rng).into_vec();
            proj.load_flat(&flat).expect("sized");
            let feats = normal_matrix(batch, d, 1.0, &mut rng);
            let labels: Vec<u32> = (0..batch)
                .map(|_| rng.random_range(0..classes as u32))
                .collect();
            let rows: Vec<&[f64]> = feats.iter_rows().collect();
            grad_check(
                |p| {
                    let mut q = proj.clone();
                    q.load_flat(p).expect("sized");
                    let (loss, g) = alignment_loss(&rows, &labels, &bank, &q).expect("finite");
                    (loss, g.to_flat())
                },
                &flat,
                EPSILON,
            )
        })
        .fold(0.0, f64::max)
}
