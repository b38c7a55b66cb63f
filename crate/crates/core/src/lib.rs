//! Few-shot open-set recognition over precomputed embedding vectors.
//!
//! The pipeline runs entirely on feature vectors produced by an external
//! backbone:
//!
//! 1. [`selection`] picks `k` representative samples per class by k-means.
//! 2. [`context`] groups masked-image (context) features into a prototype
//!    dictionary and trains an attention fusion head for closed-set labels.
//! 3. [`alignment`] trains a projector that pulls known-class features onto
//!    their class prototypes.
//! 4. [`recognizer`] scores each test sample against the prototype of its
//!    closed-set prediction and routes low-confidence samples to a fallback
//!    classifier.
//!
//! The crate is `no_std` (with `alloc`). File formats and the command-line
//! front end live in the companion `fsosr` crate.

#![no_std]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod alignment;
pub mod clustering;
pub mod config;
pub mod context;
pub mod dataset;
mod error;
pub mod numkit;
pub mod recognizer;
pub mod rng;
pub mod selection;
pub mod selfcheck;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
