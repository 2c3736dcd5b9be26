//! Synthetic training-data pipeline for facade-material classification.
//!
//! The crate covers the whole loop: diversified prompt pools, image synthesis
//! behind a pluggable backend, human triage of generated images, assembly of
//! the baseline / augmented / mixed / synthetic experiment datasets, a
//! classifier bridge (built-in centroid model or an external worker) and the
//! evaluation engine (confusion matrices, weighted P/R/F1, ROC/AUC).

pub mod assembler;
pub mod classifier;
pub mod config;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod pipeline;
pub mod prompt;
pub mod record;
pub mod schema;
pub mod seed;
pub mod synth;
pub mod triage;

pub use error::{Error, Result};
pub use manifest::{DatasetManifest, Split};
pub use record::{ImageRecord, Provenance, ReviewStatus};
pub use schema::LabelSchema;
