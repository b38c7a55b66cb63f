//! Command-line front end and file formats for `fsosr-core`.
//!
//! * [`emb`]: EMB1 embedding files and `index,label_id,class_name` label CSVs.
//! * [`container`]: named-section container for trained models.
//! * [`raster`]: PNG input/output for the center-mask utility.
//! * [`cli`]: the `fsosr` subcommands.

pub mod cli;
pub mod container;
pub mod emb;
mod error;
pub mod provenance;
pub mod raster;

pub use error::{Error, Result};
