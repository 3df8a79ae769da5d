//! Entropy-based variable-frame-rate conditioning of self-attentive
//! statistics pooling for speaker embeddings: a DSP front end, VFR
//! analysis, a small TDNN with conditioned attentive pooling, a trainer,
//! and verification scoring.

pub mod archive;
pub mod cli;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod network;
pub mod pooling;
pub mod trainer;
pub mod vfr;

pub use error::{Error, Result};
