//! Labeled embedding datasets, raster images with the center mask, and
//! seeded mini-batching.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::numkit::Matrix;
use crate::rng::{self, tags};
use crate::{Error, Result};

/// Which image the embeddings were extracted from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum View {
    #[default]
    Full,
    /// Center-masked image: background only.
    Context,
}

/// `n x d` feature matrix with dense 0-based labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    vectors: Matrix,
    labels: Vec<u32>,
    class_names: Vec<String>,
    view: View,
}

impl EmbeddingDataset {
    /// Validates and builds a dataset.
    ///
    /// Labels must be `< class_names.len()` and every class must occur at
    /// least once (contiguous id set). All values must be finite.
    pub fn new(
        vectors: Matrix,
        labels: Vec<u32>,
        class_names: Vec<String>,
        view: View,
    ) -> Result<Self> {
        if labels.len() != vectors.rows() {
            return Err(Error::dim("label count", vectors.rows(), labels.len()));
        }
        if !vectors.is_finite() {
            return Err(Error::Validation("non-finite embedding value".into()));
        }
        let mut seen = vec![false; class_names.len()];
        for (i, &l) in labels.iter().enumerate() {
            match seen.get_mut(l as usize) {
                Some(s) => *s = true,
                None => {
                    return Err(Error::Validation(format!(
                        "row {i}: label {l} outside 0..{}",
                        class_names.len()
                    )))
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Validation(format!(
                "class ids not contiguous: class {missing} ({:?}) has no samples",
                class_names[missing]
            )));
        }
        Ok(EmbeddingDataset {
            vectors,
            labels,
            class_names,
            view,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        self.vectors.row(i)
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn view(&self) -> View {
        self.view
    }

    /// Row indices grouped by class id, ascending within each class.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes()];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l as usize].push(i);
        }
        out
    }

    /// Same rows, other view.
    pub fn with_view(mut self, view: View) -> Self {
        self.view = view;
        self
    }

    /// Checks that `other` is a second view of the same corpus.
    pub fn check_paired(&self, other: &EmbeddingDataset) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Consistency(format!(
                "paired views differ in sample count ({} vs {})",
                self.len(),
                other.len()
            )));
        }
        if self.labels != other.labels {
            return Err(Error::Consistency(
                "paired views differ in labels or ordering".into(),
            ));
        }
        Ok(())
    }
}

/// 8-bit raster with 1 (gray) or 3 (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Validation("image dimensions must be >= 1".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Validation(format!(
                "unsupported channel count {channels}"
            )));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::dim(
                "pixel buffer length",
                width * height * channels,
                pixels.len(),
            ));
        }
        Ok(RasterImage {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let at = (y * self.width + x) * self.channels;
        &self.pixels[at..at + self.channels]
    }
}

/// Half-open span `[c - floor(g/2), c + ceil(g/2))` around `c = floor(len/2)`, clipped to `[0, len)`.
pub fn mask_span(len: usize, gamma: usize) -> (usize, usize) {
    let c = len / 2;
    let start = c.saturating_sub(gamma / 2);
    let end = (c + gamma.div_ceil(2)).min(len);
    (start, end)
}

/// Zeroes the `gamma x gamma` square around the image center in every channel.
pub fn mask_center(img: &RasterImage, gamma: usize) -> RasterImage {
    let mut out = img.clone();
    let (x0, x1) = mask_span(img.width, gamma);
    let (y0, y1) = mask_span(img.height, gamma);
    let ch = img.channels;
    for y in y0..y1 {
        let row = y * img.width * ch;
        out.pixels[row + x0 * ch..row + x1 * ch].fill(0);
    }
    out
}

/// Seeded permutation of `0..n` cut into consecutive chunks of `batch_size`.
pub fn split_batches(n: usize, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    split_batches_for_epoch(n, batch_size, seed, 0)
}

/// As [`split_batches`], with an independent permutation per epoch.
pub fn split_batches_for_epoch(
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, tags::BATCHES, epoch));
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}
