//! Seeded synthetic embedding corpora: Gaussian classes with a paired
//! context view, plus unseen classes for open-set evaluation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::dataset::{EmbeddingDataset, View};
use crate::numkit::{norm, squared_distance, Matrix};
use crate::recognizer::{FallbackModel, Truth};
use crate::rng;
use crate::Result;

const TAG_CENTERS: u64 = 101;
const TAG_SAMPLES: u64 = 102;
const TAG_CONTEXT: u64 = 103;

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub dim: usize,
    pub known_classes: usize,
    pub unknown_classes: usize,
    /// Distance of every class center from the origin.
    pub radius: f64,
    /// Per-coordinate noise of class samples.
    pub sigma: f64,
    /// Minimum center separation, in units of `sigma`.
    pub min_separation: f64,
    /// Background clusters the context view is drawn from.
    pub backgrounds: usize,
    pub context_sigma: f64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            dim: 32,
            known_classes: 5,
            unknown_classes: 2,
            radius: 1.0,
            sigma: 0.1,
            min_separation: 3.0,
            backgrounds: 3,
            context_sigma: 0.1,
        }
    }
}

/// Class centers (knowns first) and background centers of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub spec: TaskSpec,
    pub centers: Matrix,
    pub backgrounds: Matrix,
    seed: u64,
}

fn random_direction(dim: usize, radius: f64, rng: &mut rng::Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-9 {
            return v.into_iter().map(|x| x * radius / n).collect();
        }
    }
}

impl Task {
    pub fn new(spec: TaskSpec, seed: u64) -> Self {
        let mut rng = rng::stream(seed, TAG_CENTERS, 0);
        let total = spec.known_classes + spec.unknown_classes;
        let min_d2 = (spec.min_separation * spec.sigma) * (spec.min_separation * spec.sigma);
        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(total);
        while centers.len() < total {
            let c = random_direction(spec.dim, spec.radius, &mut rng);
            if centers.iter().all(|o| squared_distance(o, &c) >= min_d2) {
                centers.push(c);
            }
        }
        let backgrounds: Vec<Vec<f64>> = (0..spec.backgrounds.max(1))
            .map(|_| random_direction(spec.dim, spec.radius, &mut rng))
            .collect();
        Task {
            centers: Matrix::from_rows(spec.dim, &centers).expect("uniform width"),
            backgrounds: Matrix::from_rows(spec.dim, &backgrounds).expect("uniform width"),
            spec,
            seed,
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.spec.known_classes)
            .map(|i| format!("known{i}"))
            .collect()
    }

    pub fn all_class_names(&self) -> Vec<String> {
        let mut names = self.class_names();
        names.extend((0..self.spec.unknown_classes).map(|i| format!("unknown{i}")));
        names
    }

    fn draw(&self, class: usize, count: usize, stream: u64) -> Vec<Vec<f64>> {
        let mut rng = rng::stream(self.seed, TAG_SAMPLES, stream * 1024 + class as u64);
        let noise = Normal::new(0.0, self.spec.sigma).expect("finite sigma");
        (0..count)
            .map(|_| {
                self.centers
                    .row(class)
                    .iter()
                    .map(|&c| c + noise.sample(&mut rng))
                    .collect()
            })
            .collect()
    }

    /// `per_class` samples of every known class; `split` selects an independent draw.
    pub fn known_split(&self, per_class: usize, split: u64) -> Result<EmbeddingDataset> {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for class in 0..self.spec.known_classes {
            rows.extend(self.draw(class, per_class, split));
            labels.extend(core::iter::repeat_n(class as u32, per_class));
        }
        EmbeddingDataset::new(
            Matrix::from_rows(self.spec.dim, &rows)?,
            labels,
            self.class_names(),
            View::Full,
        )
    }

    /// Context view paired row-for-row with `full`: background center plus noise.
    pub fn context_view(&self, full: &EmbeddingDataset, split: u64) -> Result<EmbeddingDataset> {
        let mut rng = rng::stream(self.seed, TAG_CONTEXT, split);
        let noise = Normal::new(0.0, self.spec.context_sigma).expect("finite sigma");
        let mut rows = Vec::with_capacity(full.len());
        for _ in 0..full.len() {
            let b = rng.random_range(0..self.backgrounds.rows());
            rows.push(
                self.backgrounds
                    .row(b)
                    .iter()
                    .map(|&c| c + noise.sample(&mut rng))
                    .collect::<Vec<f64>>(),
            );
        }
        EmbeddingDataset::new(
            Matrix::from_rows(self.spec.dim, &rows)?,
            full.labels().to_vec(),
            full.class_names().to_vec(),
            View::Context,
        )
    }

    /// Known samples followed by unknown ones; truths index the open vocabulary
    /// of [`Task::fallback_model`].
    pub fn open_set_split(
        &self,
        known_per_class: usize,
        unknown_per_class: usize,
        split: u64,
    ) -> Result<(Matrix, Vec<Truth>)> {
        let mut rows = Vec::new();
        let mut truths = Vec::new();
        for class in 0..self.spec.known_classes {
            rows.extend(self.draw(class, known_per_class, split));
            truths.extend(core::iter::repeat_n(
                Truth::Known {
                    class: class as u32,
                    fallback_class: Some(class),
                },
                known_per_class,
            ));
        }
        for u in 0..self.spec.unknown_classes {
            let class = self.spec.known_classes + u;
            rows.extend(self.draw(class, unknown_per_class, split));
            truths.extend(core::iter::repeat_n(
                Truth::Unknown {
                    fallback_class: Some(class),
                },
                unknown_per_class,
            ));
        }
        Ok((Matrix::from_rows(self.spec.dim, &rows)?, truths))
    }

    /// Nearest-center classifier over every class, known and unknown.
    pub fn fallback_model(&self) -> Result<FallbackModel> {
        FallbackModel::new(self.centers.clone(), self.all_class_names())
    }
}
