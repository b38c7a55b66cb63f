//! Seeded k-means: k-means++ seeding followed by Lloyd iterations.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::numkit::{squared_distance, Matrix};
use crate::rng::{self, tags};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
    /// Independently seeded runs; the lowest-inertia run is kept.
    pub n_init: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            max_iter: 300,
            tol: 1e-6,
            n_init: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringResult {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub centroids: Matrix,
    pub inertia: f64,
    pub iterations_run: usize,
    /// Inertia of the kept run's k-means++ seeding, before any Lloyd step.
    pub initial_inertia: f64,
    /// Inertia after each Lloyd update, in order.
    pub inertia_history: Vec<f64>,
}

impl ClusteringResult {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    /// Sum of squared member-to-centroid distances per cluster.
    pub fn cluster_inertia(&self, points: &Matrix) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        for (row, &a) in points.iter_rows().zip(&self.assignments) {
            out[a] += squared_distance(row, self.centroids.row(a));
        }
        out
    }

    /// Members of `cluster` ordered by distance to its centroid, ties by index.
    pub fn members_by_distance(&self, cluster: usize, points: &Matrix) -> Vec<usize> {
        let c = self.centroids.row(cluster);
        let mut members: Vec<(f64, usize)> = self
            .assignments
            .iter()
            .enumerate()
            .filter(|&(_, &a)| a == cluster)
            .map(|(i, _)| (squared_distance(points.row(i), c), i))
            .collect();
        members.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        members.into_iter().map(|(_, i)| i).collect()
    }
}

/// Clusters the rows of `points` into `k` groups, deterministically for a given seed.
pub fn kmeans(
    points: &Matrix,
    k: usize,
    seed: u64,
    opts: KMeansOptions,
) -> Result<ClusteringResult> {
    let n = points.rows();
    if k == 0 {
        return Err(Error::Infeasible("k-means needs k >= 1".into()));
    }
    if n < k {
        return Err(Error::Infeasible(format!(
            "k-means with k={k} on only {n} points"
        )));
    }

    let mut best: Option<ClusteringResult> = None;
    for run in 0..opts.n_init.max(1) {
        let result = single_run(points, k, seed, run as u64, opts);
        // strict comparison keeps the earliest run on ties
        if best.as_ref().is_none_or(|b| result.inertia < b.inertia) {
            best = Some(result);
        }
    }
    Ok(best.expect("at least one run"))
}

fn single_run(
    points: &Matrix,
    k: usize,
    seed: u64,
    run: u64,
    opts: KMeansOptions,
) -> ClusteringResult {
    let mut centroids = plus_plus_init(points, k, seed, run);
    let mut assignments = assign(points, &centroids);
    let initial_inertia = inertia(points, &centroids, &assignments);
    let mut inertia_history = Vec::new();
    let mut iterations_run = 0;

    for it in 0..opts.max_iter.max(1) {
        if it > 0 {
            let next = assign(points, &centroids);
            if next == assignments {
                break;
            }
            assignments = next;
        }
        repair_empty(points, &centroids, &mut assignments, k);
        let updated = means(points, &assignments, k);
        let shift = centroids
            .iter_rows()
            .zip(updated.iter_rows())
            .map(|(a, b)| libm::sqrt(squared_distance(a, b)))
            .fold(0.0, f64::max);
        centroids = updated;
        iterations_run = it + 1;
        inertia_history.push(inertia(points, &centroids, &assignments));
        if shift < opts.tol {
            break;
        }
    }

    let inertia = inertia(points, &centroids, &assignments);
    ClusteringResult {
        k,
        assignments,
        centroids,
        inertia,
        iterations_run,
        initial_inertia,
        inertia_history,
    }
}

/// For each cluster, the member nearest its centroid (lowest index on ties).
pub fn nearest_to_centroid(result: &ClusteringResult, points: &Matrix) -> Result<Vec<usize>> {
    if points.rows() != result.assignments.len() {
        return Err(Error::dim(
            "clustered point count",
            result.assignments.len(),
            points.rows(),
        ));
    }
    let mut best: Vec<Option<(f64, usize)>> = vec![None; result.k];
    for (i, (row, &a)) in points.iter_rows().zip(&result.assignments).enumerate() {
        let d = squared_distance(row, result.centroids.row(a));
        match best[a] {
            Some((bd, _)) if d >= bd => {}
            _ => best[a] = Some((d, i)),
        }
    }
    best.into_iter()
        .enumerate()
        .map(|(c, b)| {
            b.map(|(_, i)| i)
                .ok_or_else(|| Error::Consistency(format!("cluster {c} is empty")))
        })
        .collect()
}

fn plus_plus_init(points: &Matrix, k: usize, seed: u64, run: u64) -> Matrix {
    let n = points.rows();
    let mut rng = rng::stream(seed, tags::KMEANS, run);
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut d2: Vec<f64> = points
        .iter_rows()
        .map(|r| squared_distance(r, points.row(chosen[0])))
        .collect();

    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            // every point coincides with a chosen center
            (0..n).find(|i| !chosen.contains(i)).expect("n >= k")
        };
        chosen.push(pick);
        for (i, row) in points.iter_rows().enumerate() {
            d2[i] = d2[i].min(squared_distance(row, points.row(pick)));
        }
    }
    Matrix::from_rows(points.cols(), chosen.iter().map(|&i| points.row(i)))
        .expect("rows share width")
}

fn assign(points: &Matrix, centroids: &Matrix) -> Vec<usize> {
    points
        .iter_rows()
        .map(|row| {
            let mut best = (f64::INFINITY, 0);
            for (c, centroid) in centroids.iter_rows().enumerate() {
                let d = squared_distance(row, centroid);
                if d < best.0 {
                    best = (d, c);
                }
            }
            best.1
        })
        .collect()
}

/// Gives every empty cluster the point farthest from its current centroid.
fn repair_empty(points: &Matrix, centroids: &Matrix, assignments: &mut [usize], k: usize) {
    let mut sizes = vec![0usize; k];
    for &a in assignments.iter() {
        sizes[a] += 1;
    }
    let mut taken = vec![false; assignments.len()];
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        let mut far: Option<(f64, usize)> = None;
        for (i, &a) in assignments.iter().enumerate() {
            if sizes[a] < 2 || taken[i] {
                continue;
            }
            let d = squared_distance(points.row(i), centroids.row(a));
            if far.is_none_or(|(fd, _)| d > fd) {
                far = Some((d, i));
            }
        }
        let (_, i) = far.expect("n >= k leaves a donor cluster");
        sizes[assignments[i]] -= 1;
        sizes[empty] = 1;
        assignments[i] = empty;
        taken[i] = true;
    }
}

fn means(points: &Matrix, assignments: &[usize], k: usize) -> Matrix {
    let mut sums = Matrix::zeros(k, points.cols());
    let mut counts = vec![0usize; k];
    for (row, &a) in points.iter_rows().zip(assignments) {
        counts[a] += 1;
        for (s, x) in sums.row_mut(a).iter_mut().zip(row) {
            *s += x;
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 {
            for s in sums.row_mut(c) {
                *s /= n as f64;
            }
        }
    }
    sums
}

fn inertia(points: &Matrix, centroids: &Matrix, assignments: &[usize]) -> f64 {
    points
        .iter_rows()
        .zip(assignments)
        .map(|(r, &a)| squared_distance(r, centroids.row(a)))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows[0].len(), rows.iter().copied()).unwrap()
    }

    #[test]
    fn k_equal_to_n_is_exact() {
        let p = pts(&[&[0.0, 1.0], &[3.0, -2.0], &[5.0, 5.0], &[-1.0, 0.5]]);
        let r = kmeans(&p, 4, 11, KMeansOptions::default()).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut seen = r.assignments.clone();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3]);
        for (i, &a) in r.assignments.iter().enumerate() {
            assert_eq!(r.centroids.row(a), p.row(i));
        }
    }

    #[test]
    fn two_separated_pairs() {
        let p = pts(&[&[0.0, 0.0], &[0.0, 1.0], &[10.0, 0.0], &[10.0, 1.0]]);
        for seed in 0..10 {
            let r = kmeans(&p, 2, seed, KMeansOptions::default()).unwrap();
            let mut cs: Vec<Vec<f64>> = r.centroids.iter_rows().map(|c| c.to_vec()).collect();
            cs.sort_by(|a, b| a[0].total_cmp(&b[0]));
            assert_eq!(cs, vec![vec![0.0, 0.5], vec![10.0, 0.5]]);
            assert_eq!(r.inertia, 1.0);
        }
    }

    #[test]
    fn single_cluster_is_global_mean() {
        let p = pts(&[&[1.0, 2.0], &[3.0, 6.0], &[-1.0, 1.0]]);
        let r = kmeans(&p, 1, 3, KMeansOptions::default()).unwrap();
        assert_eq!(r.centroids.row(0), &[1.0, 3.0]);
    }

    #[test]
    fn infeasible_when_too_few_points() {
        let p = pts(&[&[1.0], &[2.0]]);
        assert_eq!(
            kmeans(&p, 3, 0, KMeansOptions::default())
                .unwrap_err()
                .kind(),
            crate::ErrorKind::Infeasible
        );
        assert!(kmeans(&p, 0, 0, KMeansOptions::default()).is_err());
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let p = pts(&[&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0], &[2.0, 2.0]]);
        let r = kmeans(&p, 3, 5, KMeansOptions::default()).unwrap();
        assert!(r.cluster_sizes().iter().all(|&s| s > 0));
        assert_eq!(nearest_to_centroid(&r, &p).unwrap().len(), 3);
    }

    #[test]
    fn nearest_singleton_and_tie() {
        let p = pts(&[&[0.0, 0.0], &[4.0, 0.0], &[100.0, 0.0]]);
        let r = ClusteringResult {
            k: 2,
            assignments: vec![0, 0, 1],
            centroids: pts(&[&[2.0, 0.0], &[100.0, 0.0]]),
            inertia: 8.0,
            iterations_run: 1,
            initial_inertia: 8.0,
            inertia_history: vec![8.0],
        };
        assert_eq!(nearest_to_centroid(&r, &p).unwrap(), vec![0, 2]);
        assert_eq!(r.members_by_distance(0, &p), vec![0, 1]);
    }
}
