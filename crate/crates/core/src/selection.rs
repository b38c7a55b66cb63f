//! Clustering-based data selection: keep the `k` pool samples per class that
//! sit closest to the centroids of a per-class k-means.

use alloc::format;
use alloc::vec::Vec;

use crate::clustering::{kmeans, KMeansOptions};
use crate::dataset::EmbeddingDataset;
use crate::numkit::Matrix;
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPick {
    /// Pool row chosen for this cluster.
    pub index: usize,
    pub size: usize,
    pub inertia: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassSelection {
    pub class: u32,
    /// Pool rows, ascending.
    pub chosen: Vec<usize>,
    /// One entry per cluster, in cluster order.
    pub clusters: Vec<ClusterPick>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport {
    pub k: usize,
    pub classes: Vec<ClassSelection>,
}

impl SelectionReport {
    pub fn total_selected(&self) -> usize {
        self.classes.iter().map(|c| c.chosen.len()).sum()
    }

    /// Pool rows in output order: class by class, ascending within a class.
    pub fn selected_indices(&self) -> Vec<usize> {
        self.classes
            .iter()
            .flat_map(|c| c.chosen.iter().copied())
            .collect()
    }
}

/// Picks `k` distinct representatives per class.
pub fn select_representatives(
    pool: &EmbeddingDataset,
    k: usize,
    seed: u64,
) -> Result<SelectionReport> {
    if k == 0 {
        return Err(Error::Infeasible("k must be >= 1".into()));
    }
    let by_class = pool.indices_by_class();
    let mut classes = Vec::with_capacity(by_class.len());
    for (class, rows) in by_class.iter().enumerate() {
        if rows.len() < k {
            return Err(Error::Infeasible(format!(
                "class {class} ({:?}) has {} samples, fewer than k={k}",
                pool.class_names()[class],
                rows.len()
            )));
        }
        let points = Matrix::from_rows(pool.dim(), rows.iter().map(|&i| pool.vector(i)))?;
        let result = kmeans(
            &points,
            k,
            rng::derive_seed(seed, class as u64),
            KMeansOptions::default(),
        )?;
        let sizes = result.cluster_sizes();
        let inertia = result.cluster_inertia(&points);

        let mut picked: Vec<usize> = Vec::with_capacity(k);
        let mut clusters = Vec::with_capacity(k);
        for c in 0..k {
            // clusters partition the class, so the nearest member is normally free
            let local = result
                .members_by_distance(c, &points)
                .into_iter()
                .find(|i| !picked.contains(i))
                .or_else(|| (0..points.rows()).find(|i| !picked.contains(i)))
                .expect("class has at least k rows");
            picked.push(local);
            clusters.push(ClusterPick {
                index: rows[local],
                size: sizes[c],
                inertia: inertia[c],
            });
        }
        let mut chosen: Vec<usize> = picked.iter().map(|&i| rows[i]).collect();
        chosen.sort_unstable();
        classes.push(ClassSelection {
            class: class as u32,
            chosen,
            clusters,
        });
    }
    Ok(SelectionReport { k, classes })
}

/// Copies the selected rows out of `pool`, class by class.
pub fn materialize_selection(
    pool: &EmbeddingDataset,
    report: &SelectionReport,
) -> Result<EmbeddingDataset> {
    let indices = report.selected_indices();
    for class in &report.classes {
        for &i in &class.chosen {
            if i >= pool.len() {
                return Err(Error::Consistency(format!(
                    "selected row {i} outside pool of {}",
                    pool.len()
                )));
            }
            if pool.label(i) != class.class {
                return Err(Error::Consistency(format!(
                    "selected row {i} has label {} but was reported for class {}",
                    pool.label(i),
                    class.class
                )));
            }
        }
    }
    let vectors = Matrix::from_rows(pool.dim(), indices.iter().map(|&i| pool.vector(i)))?;
    let labels = indices.iter().map(|&i| pool.label(i)).collect();
    EmbeddingDataset::new(vectors, labels, pool.class_names().to_vec(), pool.view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::View;
    use alloc::string::String;
    use alloc::vec;

    fn ds(rows: &[&[f64]], labels: &[u32], classes: usize) -> EmbeddingDataset {
        let m = Matrix::from_rows(rows[0].len(), rows.iter().copied()).unwrap();
        let names = (0..classes)
            .map(|i| format!("class{i}"))
            .collect::<Vec<String>>();
        EmbeddingDataset::new(m, labels.to_vec(), names, View::Full).unwrap()
    }

    #[test]
    fn exactly_k_samples_selects_all() {
        let pool = ds(
            &[&[0.0], &[5.0], &[1.0], &[9.0], &[2.0]],
            &[0, 1, 0, 1, 0],
            2,
        );
        let r = select_representatives(&pool, 2, 1).unwrap();
        assert_eq!(r.classes[1].chosen, vec![1, 3]);
        assert_eq!(r.classes[0].chosen.len(), 2);
        assert_eq!(r.total_selected(), 4);
    }

    #[test]
    fn k1_picks_sample_nearest_the_mean() {
        let pool = ds(
            &[&[0.0, 0.0], &[1.0, 1.0], &[4.0, 4.0], &[1.2, 0.9]],
            &[0, 0, 0, 0],
            1,
        );
        // mean = (1.55, 1.475); row 3 is closest
        let r = select_representatives(&pool, 1, 0).unwrap();
        assert_eq!(r.classes[0].chosen, vec![3]);
    }

    #[test]
    fn short_class_is_named_in_error() {
        let pool = ds(&[&[0.0], &[1.0], &[2.0]], &[0, 0, 1], 2);
        let err = select_representatives(&pool, 2, 0).unwrap_err();
        assert_eq!(err.kind(), crate::ErrorKind::Infeasible);
        assert!(alloc::string::ToString::to_string(&err).contains("class1"));
    }

    #[test]
    fn materialize_copies_rows_and_rejects_stale_reports() {
        let pool = ds(&[&[0.0], &[5.0], &[1.0], &[9.0]], &[0, 1, 0, 1], 2);
        let r = select_representatives(&pool, 2, 3).unwrap();
        let out = materialize_selection(&pool, &r).unwrap();
        for (j, &i) in r.selected_indices().iter().enumerate() {
            assert_eq!(out.vector(j), pool.vector(i));
            assert_eq!(out.label(j), pool.label(i));
        }
        let mut stale = r.clone();
        stale.classes[0].chosen[0] = 17;
        assert_eq!(
            materialize_selection(&pool, &stale).unwrap_err().kind(),
            crate::ErrorKind::Consistency
        );
        let mut wrong = r;
        wrong.classes[0].chosen[0] = 1;
        assert!(materialize_selection(&pool, &wrong).is_err());
    }
}
