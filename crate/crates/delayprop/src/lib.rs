//! delayprop — train spiking networks with per-synapse transmission delays
//! and deploy them as quantized integer models.
//!
//! The pipeline: build a LIF network whose synapses carry real-valued delays
//! ([`model`]), simulate it on a fixed grid with delay ring buffers ([`sim`]),
//! compute exact gradients for weights *and* delays from the spike record
//! alone ([`eventprop`]), train with Adam ([`train`]), then quantize to int8
//! weights and integer delay steps, export to a portable HDF5 exchange file,
//! and verify behaviour with a bit-deterministic fixed-point emulator
//! ([`quant`]). [`data`] loads event-based audio datasets in the standard
//! HDF5 layout and generates a synthetic coincidence task that is solvable
//! with delays but not with instantaneous weights alone.
//!
//! Start with the runnable examples (`cargo run --example train_synthetic`)
//! or the `delayprop` binary (`delayprop train --help`); both sit on the
//! same public API ([`config`] for TOML run files, [`cli`] for the
//! subcommands, [`manifest`] for provenance records).

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eventprop;
pub mod manifest;
pub mod model;
pub mod quant;
pub mod sim;
pub mod train;

pub use error::{Error, Result};

/// Crate version, recorded in manifests and file headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
