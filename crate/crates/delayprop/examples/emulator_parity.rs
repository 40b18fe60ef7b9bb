//! Float reference vs integer-only emulator, spike for spike.
//!
//! The fixed-point emulator replays a quantized model using nothing but
//! integer state arithmetic (Q.16 state, Q.12 decay multipliers, raw int8
//! ring-buffer sums), the way a deployment target would. This example trains
//! a model, quantizes it, and compares both backends sample by sample.
//!
//!     cargo run --release --example emulator_parity

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use delayprop::config::RunConfig;
use delayprop::quant::{dequantize, emulate_fixed_point, parity_report, quantize, FixedPointConfig};
use delayprop::sim::run_forward;
use delayprop::train::{train_epoch, Adam};

fn main() {
    let config_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic_delays.toml");
    let mut cfg = RunConfig::load(&config_path).unwrap();
    cfg.train.epochs = Some(12);
    cfg.validate().unwrap();
    let tc = cfg.train.train_config();
    let data = cfg.load_data().unwrap();
    let mut net = cfg.build_network(data.n_channels, data.n_classes).unwrap();
    let mut adam = Adam::new(&net, &tc);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    for _ in 0..tc.epochs {
        train_epoch(&mut net, &mut adam, &data.train, &tc, &mut rng).unwrap();
    }

    let (model, _) = quantize(&net);
    // The float reference for parity is the dequantized model: same int8
    // weights and stepped delays, float state path.
    let reference = dequantize(&model, net.n_timesteps()).unwrap();
    let fp = FixedPointConfig::default();
    let tau_loss = tc.loss.tau_loss_ms(net.dt(), net.n_timesteps());

    let mut agree = 0usize;
    let (mut match_sum, mut max_dev) = (0.0f64, 0.0f64);
    let n = 40.min(data.test.len());
    for sample in &data.test[..n] {
        let (ref_rec, ref_trace) = run_forward(&reference, &sample.events).unwrap();
        let (fix_rec, fix_trace, _) =
            emulate_fixed_point(&model, &sample.events, net.n_timesteps(), &fp).unwrap();
        let rep = parity_report((&ref_rec, &ref_trace), (&fix_rec, &fix_trace), net.dt(), tau_loss)
            .unwrap();
        agree += rep.predictions_agree as usize;
        match_sum += rep.event_match_rate();
        max_dev = max_dev.max(rep.max_voltage_dev);
    }
    println!("{n} samples through both backends:");
    println!("  prediction agreement   {agree}/{n}");
    println!("  mean event match rate  {:.4}", match_sum / n as f64);
    println!("  worst voltage deviation {max_dev:.5} (float units)");
}
