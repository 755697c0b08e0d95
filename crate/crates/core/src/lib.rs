//! Nanomaterial morphology prediction from synthesis parameters.
//!
//! The crate covers the whole modelling pipeline for calcium-carbonate
//! synthesis records:
//!
//! * [`data`]: record schema, label taxonomy, CSV ingestion, splitting.
//! * [`stats`]: two-sample and k-sample hypothesis tests, contingency tests and
//!   Bonferroni-corrected feature screening.
//! * [`trees`]: CART, random forest and second-order gradient boosting with
//!   cross-validated grid search and threshold tuning.
//! * [`attribution`]: exact path-dependent TreeSHAP.
//! * [`prompts`]: textual/tabular rendering and few-shot prompt assembly.
//! * [`llm`]: chat-completion client with rate limiting, transcripts and replay.
//! * [`harness`]: repeated experiments aggregated into report tables.
//! * [`img_metrics`]: SSIM, PSNR and polydispersity index.

pub mod attribution;
pub mod data;
pub mod error;
pub mod harness;
pub mod img_metrics;
pub mod llm;
pub mod prompts;
pub mod rng;
pub mod stats;
pub mod trees;

pub use error::{Error, ErrorClass, Result};
