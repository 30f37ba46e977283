//! Choroid segmentation and measurement for OCT B-scans.

pub mod augment;
pub mod boundary;
pub mod error;
pub mod grid;
pub mod ingest;
pub mod measure;
pub mod nnexec;
pub mod par;
pub mod phantom;
pub mod pipeline;
pub mod segment;
pub mod stats;

pub use error::{Error, Result};
pub use grid::Grid;
