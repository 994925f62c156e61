//! Ambient-sensing activity pipeline, desk-scale.
//!
//! The crate covers the whole path from simulated sensor hardware to
//! care reminders:
//!
//! - [`trace`]: the 15-channel 90 Hz data model, its CSV format, windowing,
//!   and the noise/downsampling degradations.
//! - [`syngen`]: deterministic synthetic-activity generation and the
//!   labeled train/test corpus.
//! - [`fft`], [`model`], [`train`], [`metrics`]: the atomic-activity
//!   classifier (channel-wise MLPs plus a spectral branch), trained from
//!   scratch, with evaluation and robustness sweeps.
//! - [`reasoner`]: rule-based complex-activity detection over label
//!   sequences, with sequence correction.
//! - [`llm`]: prompt construction, response parsing, and completion
//!   clients (deterministic mock plus an HTTP client) for LLM-assisted
//!   sequence verification.
//! - [`gateway`]: the edge agent and cloud service speaking newline-
//!   delimited JSON over TCP, with an append-only store.

pub mod fft;
pub mod gateway;
pub mod label;
pub mod llm;
pub mod metrics;
pub mod reasoner;
pub mod model;
pub mod syngen;
pub mod trace;
pub mod train;

pub use label::{ActivityLabel, NUM_CLASSES, SENSED_LABELS};
