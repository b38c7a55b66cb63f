#![allow(dead_code)]

use fsosr_core::dataset::{EmbeddingDataset, View};
use fsosr_core::numkit::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller, independent of the crate's sampling path
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| gaussian(rng)).collect(),
    )
    .unwrap()
}

pub fn dataset(vectors: Matrix, labels: Vec<u32>) -> EmbeddingDataset {
    let classes = labels.iter().max().map_or(0, |&m| m as usize + 1);
    let names = (0..classes).map(|i| format!("class{i}")).collect();
    EmbeddingDataset::new(vectors, labels, names, View::Full).unwrap()
}

pub fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Minimum inertia over every assignment of `points` to `k` non-empty groups.
pub fn brute_force_inertia(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let d = points[0].len();
    let mut best = f64::INFINITY;
    let total = k.pow(n as u32);
    for code in 0..total {
        let mut assign = vec![0; n];
        let mut c = code;
        for a in assign.iter_mut() {
            *a = c % k;
            c /= k;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        if counts.contains(&0) {
            continue;
        }
        let mut inertia = 0.0;
        for (p, &a) in points.iter().zip(&assign) {
            let mean: Vec<f64> = sums[a].iter().map(|s| s / counts[a] as f64).collect();
            inertia += sq(p, &mean);
        }
        best = best.min(inertia);
    }
    best
}

/// Four well-separated Gaussian modes of `per_mode` points each; returns the
/// dataset (one class) and the generating mode of every row.
pub fn four_mode_class(seed: u64, per_mode: usize, sigma: f64) -> (EmbeddingDataset, Vec<usize>) {
    let mut r = rng(seed);
    let centers = [[0.0, 0.0], [3.0, 0.0], [0.0, 3.0], [3.0, 3.0]];
    let mut rows = Vec::new();
    let mut modes = Vec::new();
    for (m, c) in centers.iter().enumerate() {
        for _ in 0..per_mode {
            rows.push(vec![
                c[0] + sigma * gaussian(&mut r),
                c[1] + sigma * gaussian(&mut r),
            ]);
            modes.push(m);
        }
    }
    let n = rows.len();
    (
        dataset(Matrix::from_rows(2, &rows).unwrap(), vec![0; n]),
        modes,
    )
}
