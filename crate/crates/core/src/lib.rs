//! Score-driven image dataset curation.
//!
//! Records flow through threshold and resolution stages, near-duplicate
//! clustering, and a cross-attention quality estimator before a final top-n
//! selection. Side-by-side evaluation statistics, Fréchet distance, a
//! recaptioning client and a small annotation service round out the crate.

pub mod caption;
pub mod cli;
pub mod dedup;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod provider;
pub mod selector;
pub mod service;
pub mod stage;
pub mod synth;

pub use error::{Error, Result};
pub use model::{DatasetManifest, ImageRecord, StageReport};
