//! # polyphonia
//!
//! Acoustic-prior extraction and attention calibration for stem-specific
//! music editing experiments, with a synthetic dual-path harness and the
//! analysis metrics that go with it.
//!
//! The pipeline, end to end:
//!
//! ```text
//! mixture WAV -> blind source separation -> target/non-target aggregation
//!             -> acoustic prior (ideal ratio mask) -> attention calibration
//!             -> dual-path inversion/editing harness -> traces + entropy analysis
//! ```
//!
//! - [`signal`]: waveform I/O, STFT/ISTFT, mel filterbanks, log-mel, CQT.
//! - [`separation`]: naive DSP separator (HPSS + Butterworth), stem ingestion,
//!   target-to-stem mapping, waveform-domain stem aggregation.
//! - [`prior`]: ideal ratio masks (linear and mel domain), min-max baseline,
//!   resolution alignment.
//! - [`calibration`]: scaled dot-product attention, pre-softmax source
//!   interpolation, acoustic modulation via spatio-textual bias, token masks,
//!   strength schedules.
//! - [`harness`]: a deterministic toy attention stack executing the full
//!   inversion/editing loop with logit caching.
//! - [`metrics`]: attention entropy, CQT top-1 Pearson correlation, min-max
//!   normalization, harmonic-mean composites.
//! - [`container`]: the self-describing binary tensor format used for priors,
//!   caches, and traces.
//!
//! All operations are pure functions of their inputs plus explicit seeds;
//! nothing reads the clock or OS entropy.

pub mod calibration;
pub mod container;
pub mod error;
pub mod harness;
pub mod manifest;
pub mod metrics;
pub mod pipeline;
pub mod prior;
pub mod separation;
pub mod signal;

pub use error::{PolyError, Result};

/// Default working sample rate in Hz; override with `POLY_WORKING_SR`.
pub const DEFAULT_WORKING_SR: u32 = 16_000;
