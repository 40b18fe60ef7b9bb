//! Quantize a trained network and round-trip it through the exchange file.
//!
//! Weights drop to int8 with one scale per projection, delays snap to integer
//! timesteps clamped at the 62-step hardware cap, and the whole model is
//! written to an HDF5 exchange file. Importing it back must reproduce the
//! model bit for bit.
//!
//!     cargo run --release --example quantize_roundtrip

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use delayprop::config::RunConfig;
use delayprop::quant::{export_exchange, import_exchange, quantize, MAX_DELAY_STEPS};
use delayprop::train::{train_epoch, Adam};

fn main() {
    // A short training run gives the quantizer a non-trivial parent model.
    let config_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic_delays.toml");
    let mut cfg = RunConfig::load(&config_path).unwrap();
    cfg.train.epochs = Some(8);
    cfg.validate().unwrap();
    let tc = cfg.train.train_config();
    let data = cfg.load_data().unwrap();
    let mut net = cfg.build_network(data.n_channels, data.n_classes).unwrap();
    let mut adam = Adam::new(&net, &tc);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    for _ in 0..tc.epochs {
        train_epoch(&mut net, &mut adam, &data.train, &tc, &mut rng).unwrap();
    }

    let (model, report) = quantize(&net);
    println!("quantized {} projections:", model.projections.len());
    for (j, (proj, scale)) in model.projections.iter().zip(&report.scales).enumerate() {
        let max_delay = proj.delay_steps.iter().copied().max().unwrap_or(0);
        println!(
            "  proj {j}: scale {scale:.6}, {} int8 weights, max delay {max_delay} steps \
             (cap {MAX_DELAY_STEPS})",
            proj.weights.len()
        );
    }
    println!(
        "max weight rounding error {:.6} (half a scale step), {} delays clamped",
        report.max_weight_err, report.n_clamped_delays
    );

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.net.h5");
    export_exchange(&path, &model, false).unwrap();
    let bytes = std::fs::metadata(&path).unwrap().len();
    let back = import_exchange(&path).unwrap();
    println!(
        "exchange file: {bytes} B on disk, round-trip bit-identical: {}",
        back == model
    );
}
