//! Concept-contrast toolkit.
//!
//! Summarizes the neurons of a feature extractor into visual-concept clusters
//! from activation dumps, computes concept activation vectors, evaluates
//! feature-level and concept-level contrastive losses with analytic
//! gradients, and reports generalization diagnostics (neuron coverage,
//! hyperspherical energy). A deterministic desk-scale trainer runs the full
//! two-stage protocol (cross-entropy pre-training, then contrastive
//! fine-tuning with periodic re-summarization) on synthetic multi-domain
//! data.
//!
//! Modules map onto the pipeline stages:
//!
//! * [`store`] — activation-dump file formats and validated datasets;
//! * [`summarize`] — neuron summarization into concept clusters;
//! * [`contrast`] — CAVs and the contrastive losses;
//! * [`metrics`] — coverage, energy, projection export;
//! * [`trainer`] — the synthetic-data toy trainer.

pub mod contrast;
pub mod error;
mod kmeans;
pub mod metrics;
pub mod store;
pub mod summarize;
pub mod trainer;

pub use error::{Error, Result};

/// Version stamp embedded in manifests and JSON outputs.
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");
