//! Operations checked against independent brute-force or closed-form oracles.

#![allow(clippy::needless_range_loop)]

mod common;

use common::*;
use fsosr_core::alignment::compute_prototypes;
use fsosr_core::clustering::{kmeans, nearest_to_centroid, ClusteringResult, KMeansOptions};
use fsosr_core::context::{fuse, ContextDictionary, FusionHead};
use fsosr_core::numkit::{grad_check, Matrix};
use fsosr_core::recognizer::{fallback_predict, FallbackModel};
use fsosr_core::selection::{materialize_selection, select_representatives};
use rand::Rng;

#[test]
fn kmeans_matches_brute_force_on_tiny_sets() {
    let mut hits = 0;
    let trials = 30;
    for t in 0..trials {
        let mut r = rng(100 + t);
        let n = r.random_range(4..=7);
        let d = r.random_range(1..=3);
        let k = r.random_range(2..=3);
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| gaussian(&mut r)).collect())
            .collect();
        let m = Matrix::from_rows(d, &pts).unwrap();
        let res = kmeans(&m, k, t, KMeansOptions::default()).unwrap();
        if (res.inertia - brute_force_inertia(&pts, k)).abs() < 1e-9 {
            hits += 1;
        }
    }
    assert!(hits >= 25, "{hits}/{trials}");
}

#[test]
fn nearest_to_centroid_matches_exhaustive_scan() {
    let mut r = rng(5);
    let pts = random_matrix(20, 4, &mut r);
    for k in [1, 3] {
        let res = kmeans(&pts, k, 9, KMeansOptions::default()).unwrap();
        let got = nearest_to_centroid(&res, &pts).unwrap();
        for c in 0..k {
            let mut best = (f64::INFINITY, usize::MAX);
            for i in 0..pts.rows() {
                if res.assignments[i] == c {
                    let d = sq(pts.row(i), res.centroids.row(c));
                    if d < best.0 {
                        best = (d, i);
                    }
                }
            }
            assert_eq!(got[c], best.1);
        }
    }
}

#[test]
fn nearest_to_centroid_symmetric_tie_takes_lowest_index() {
    let pts = Matrix::from_rows(2, [[4.0, 0.0], [0.0, 0.0]]).unwrap();
    let res = ClusteringResult {
        k: 1,
        assignments: vec![0, 0],
        centroids: Matrix::from_rows(2, [[2.0, 0.0]]).unwrap(),
        inertia: 8.0,
        iterations_run: 1,
        initial_inertia: 8.0,
        inertia_history: vec![8.0],
    };
    assert_eq!(nearest_to_centroid(&res, &pts).unwrap(), vec![0]);
}

#[test]
fn selection_covers_every_generator_mode() {
    for seed in 0..10 {
        let (ds, modes) = four_mode_class(seed, 25, 0.1);
        let rep = select_representatives(&ds, 4, seed).unwrap();
        let mut hit: Vec<usize> = rep.classes[0].chosen.iter().map(|&i| modes[i]).collect();
        hit.sort();
        assert_eq!(hit, vec![0, 1, 2, 3], "seed {seed}");
    }
}

#[test]
fn selected_samples_are_more_diverse_than_a_mode() {
    let (ds, modes) = four_mode_class(3, 25, 0.1);
    let rep = select_representatives(&ds, 4, 3).unwrap();
    let chosen = &rep.classes[0].chosen;
    let mut intra = Vec::new();
    for i in 0..ds.len() {
        for j in i + 1..ds.len() {
            if modes[i] == modes[j] {
                intra.push(sq(ds.vector(i), ds.vector(j)).sqrt());
            }
        }
    }
    intra.sort_by(f64::total_cmp);
    let median = intra[intra.len() / 2];
    for (a, &i) in chosen.iter().enumerate() {
        for &j in &chosen[a + 1..] {
            assert!(sq(ds.vector(i), ds.vector(j)).sqrt() > median);
        }
    }
}

#[test]
fn materialized_rows_are_verbatim_pool_rows() {
    let mut r = rng(8);
    let labels: Vec<u32> = (0..40).map(|i| i % 4).collect();
    let pool = dataset(random_matrix(40, 6, &mut r), labels);
    let rep = select_representatives(&pool, 3, 1).unwrap();
    let out = materialize_selection(&pool, &rep).unwrap();
    assert_eq!(out.len(), 12);
    for (j, &i) in rep.selected_indices().iter().enumerate() {
        assert_eq!(out.vector(j), pool.vector(i));
        assert!((0..pool.len()).any(|p| pool.vector(p) == out.vector(j)));
    }
    for c in &rep.classes {
        assert_eq!(c.chosen.len(), 3);
        assert!(c.chosen.windows(2).all(|w| w[0] < w[1]));
        assert!(c.chosen.iter().all(|&i| pool.label(i) == c.class));
    }
}

#[test]
fn many_classes_times_k_rows() {
    let classes = 374;
    let mut r = rng(2);
    let labels: Vec<u32> = (0..classes * 5).map(|i| (i / 5) as u32).collect();
    let pool = dataset(random_matrix(classes * 5, 3, &mut r), labels);
    let rep = select_representatives(&pool, 4, 0).unwrap();
    assert_eq!(materialize_selection(&pool, &rep).unwrap().len(), 1496);
}

#[test]
fn exact_k_pool_is_reproduced() {
    let mut r = rng(4);
    let labels: Vec<u32> = (0..12).map(|i| i % 3).collect();
    let pool = dataset(random_matrix(12, 2, &mut r), labels);
    let out = materialize_selection(&pool, &select_representatives(&pool, 4, 0).unwrap()).unwrap();
    let mut a: Vec<Vec<u64>> = (0..12)
        .map(|i| pool.vector(i).iter().map(|x| x.to_bits()).collect())
        .collect();
    let mut b: Vec<Vec<u64>> = (0..12)
        .map(|i| out.vector(i).iter().map(|x| x.to_bits()).collect())
        .collect();
    a.sort();
    b.sort();
    assert_eq!(a, b);
}

#[test]
fn prototypes_match_one_pass_summation() {
    let mut r = rng(11);
    let labels: Vec<u32> = (0..50).map(|i| (i * 7 % 5) as u32).collect();
    let ds = dataset(random_matrix(50, 8, &mut r), labels.clone());
    let bank = compute_prototypes(&ds).unwrap();
    for c in 0..5u32 {
        let members: Vec<usize> = (0..50).filter(|&i| labels[i] == c).collect();
        for j in 0..8 {
            let mean = members.iter().map(|&i| ds.vector(i)[j]).sum::<f64>() / members.len() as f64;
            assert!((bank.prototype(c as usize)[j] - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn fallback_matches_exhaustive_cosine_scan() {
    let mut r = rng(12);
    for _ in 0..20 {
        let rows = random_matrix(5, 6, &mut r);
        let f: Vec<f64> = (0..6).map(|_| gaussian(&mut r)).collect();
        let fb =
            FallbackModel::new(rows.clone(), (0..5).map(|i| format!("c{i}")).collect()).unwrap();
        let cos = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt()
                * b.iter().map(|x| x * x).sum::<f64>().sqrt())
        };
        let best = (0..5)
            .max_by(|&a, &b| {
                cos(&f, rows.row(a))
                    .total_cmp(&cos(&f, rows.row(b)))
                    .then(b.cmp(&a))
            })
            .unwrap();
        assert_eq!(fallback_predict(&f, &fb).unwrap(), best);
    }
    let row = Matrix::from_rows(2, [[0.2, 0.9]]).unwrap();
    let fb = FallbackModel::new(row, vec!["only".into()]).unwrap();
    assert_eq!(fallback_predict(&[0.2, 0.9], &fb).unwrap(), 0);
}

#[test]
fn fuse_matches_term_by_term_expression() {
    // Identity attention, f orthogonal to every prototype: all scores 0, lambda uniform.
    let d = 4;
    let protos = Matrix::from_rows(
        d,
        [
            [0.0, 0.0, 1.0, 2.0],
            [0.0, 0.0, -3.0, 0.5],
            [0.0, 0.0, 0.0, 1.0],
        ],
    )
    .unwrap();
    let sizes = vec![5, 3, 2];
    let dict = ContextDictionary::from_parts(protos.clone(), sizes.clone()).unwrap();
    let mut head = FusionHead::zeros(d, 2);
    head.query = Matrix::identity(d);
    head.key = Matrix::identity(d);
    let f = [1.5, -2.0, 0.0, 0.0];
    let out = fuse(&f, &dict, &head).unwrap();
    for l in &out.lambdas {
        assert!((l - 1.0 / 3.0).abs() < 1e-15);
    }
    let mut expect = f.to_vec();
    for (i, &s) in sizes.iter().enumerate() {
        let prior = s as f64 / 10.0;
        for j in 0..d {
            expect[j] += (1.0 / 3.0) * prior * protos.get(i, j);
        }
    }
    for j in 0..d {
        assert!((out.features[j] - expect[j]).abs() < 1e-14);
    }
}

#[test]
fn fuse_general_case_matches_scripted_oracle() {
    let mut r = rng(21);
    let d = 5;
    let dict = ContextDictionary::from_parts(random_matrix(3, d, &mut r), vec![1, 4, 2]).unwrap();
    let mut head = FusionHead::zeros(d, 2);
    head.query = random_matrix(d, d, &mut r);
    head.key = random_matrix(d, d, &mut r);
    let f: Vec<f64> = (0..d).map(|_| gaussian(&mut r)).collect();

    let mv = |m: &Matrix, v: &[f64]| -> Vec<f64> {
        (0..m.rows())
            .map(|i| (0..m.cols()).map(|j| m.get(i, j) * v[j]).sum())
            .collect()
    };
    let q = mv(&head.query, &f);
    let scores: Vec<f64> = (0..3)
        .map(|i| {
            let k = mv(&head.key, dict.prototypes().row(i));
            q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt()
        })
        .collect();
    let z: f64 = scores.iter().map(|s| s.exp()).sum();
    let lambdas: Vec<f64> = scores.iter().map(|s| s.exp() / z).collect();
    let out = fuse(&f, &dict, &head).unwrap();
    for i in 0..3 {
        assert!((out.lambdas[i] - lambdas[i]).abs() < 1e-12);
    }
    for j in 0..d {
        let e = f[j]
            + (0..3)
                .map(|i| lambdas[i] * dict.priors()[i] * dict.prototypes().get(i, j))
                .sum::<f64>();
        assert!((out.features[j] - e).abs() < 1e-12);
    }
}

/// Softmax cross-entropy of a bare linear classifier, written out by hand.
fn linear_ce(params: &[f64], xs: &Matrix, ys: &[usize], classes: usize) -> (f64, Vec<f64>) {
    let d = xs.cols();
    let (w, b) = params.split_at(classes * d);
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    let n = xs.rows() as f64;
    for (i, &y) in ys.iter().enumerate() {
        let x = xs.row(i);
        let logits: Vec<f64> = (0..classes)
            .map(|c| (0..d).map(|j| w[c * d + j] * x[j]).sum::<f64>() + b[c])
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        loss += (z.ln() + m - logits[y]) / n;
        for c in 0..classes {
            let g = ((logits[c] - m).exp() / z - if c == y { 1.0 } else { 0.0 }) / n;
            for j in 0..d {
                grad[c * d + j] += g * x[j];
            }
            grad[classes * d + c] += g;
        }
    }
    (loss, grad)
}

#[test]
fn grad_check_on_linear_cross_entropy() {
    let mut r = rng(31);
    let (classes, d) = (3, 4);
    let xs = random_matrix(5, d, &mut r);
    let ys: Vec<usize> = (0..5).map(|_| r.random_range(0..classes)).collect();
    let params: Vec<f64> = (0..classes * d + classes)
        .map(|_| gaussian(&mut r))
        .collect();
    let err = grad_check(|p| linear_ce(p, &xs, &ys, classes), &params, 1e-6);
    assert!(err < 1e-5, "{err}");
}
