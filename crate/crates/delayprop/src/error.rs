//! Crate-wide error type.
//!
//! Variants are grouped by failure class so the CLI can map them onto exit
//! codes: usage and input errors exit with 2, internal failures with 1.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // ── model / configuration validation ────────────────────────────────
    #[error("population {index} ({name:?}): {reason}")]
    InvalidPopulation {
        index: usize,
        name: String,
        reason: String,
    },

    #[error("projection {index}: {reason}")]
    InvalidProjection { index: usize, reason: String },

    #[error("network: {0}")]
    InvalidNetwork(String),

    #[error("config: {0}")]
    InvalidConfig(String),

    // ── simulation / gradient ───────────────────────────────────────────
    #[error("non-finite state at step {step} in population {population:?} (diverged)")]
    NonFiniteState { step: usize, population: String },

    #[error("non-finite gradient in {what} (training diverged; reduce learning rates or enable grad_clip)")]
    NonFiniteGradient { what: String },

    #[error("{context}: shape mismatch, expected {expected} got {got}")]
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },

    // ── datasets ────────────────────────────────────────────────────────
    #[error("dataset {path}: {reason}")]
    InvalidDataset { path: String, reason: String },

    #[error("dataset sample {sample}: channel {channel} out of range (n_channels = {n_channels})")]
    ChannelOutOfRange {
        sample: usize,
        channel: u32,
        n_channels: u32,
    },

    // ── quantization / exchange / emulator ──────────────────────────────
    #[error("exchange file {path}: {reason}")]
    InvalidExchangeFile { path: String, reason: String },

    #[error("exchange file {path}: unsupported format version {found} (this build reads version {supported})")]
    UnsupportedVersion {
        path: String,
        found: u32,
        supported: u32,
    },

    #[error("refusing to overwrite {path} (pass --force to allow)")]
    RefuseOverwrite { path: String },

    #[error("fixed-point overflow: {what} at step {step}, neuron {neuron} of {population:?} (|value| >= 2^{bits}); rescale weights or widen the state")]
    FixedPointOverflow {
        what: String,
        step: usize,
        neuron: usize,
        population: String,
        bits: u32,
    },

    // ── checkpoints / manifests / IO ────────────────────────────────────
    #[error("checkpoint {path}: {reason}")]
    InvalidCheckpoint { path: String, reason: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("hdf5: {0}")]
    Hdf5(#[from] hdf5::Error),

    #[error("{0}")]
    Other(String),
}

impl Error {
    /// Wrap an IO error with the path or action that produced it.
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// `true` for errors caused by bad user input (CLI exit code 2),
    /// `false` for internal failures (exit code 1).
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidPopulation { .. }
                | Error::InvalidProjection { .. }
                | Error::InvalidNetwork(_)
                | Error::InvalidConfig(_)
                | Error::InvalidDataset { .. }
                | Error::ChannelOutOfRange { .. }
                | Error::InvalidExchangeFile { .. }
                | Error::UnsupportedVersion { .. }
                | Error::RefuseOverwrite { .. }
                | Error::InvalidCheckpoint { .. }
        )
    }
}
