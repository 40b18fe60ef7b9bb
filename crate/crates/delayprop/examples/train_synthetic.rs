//! Train a delay network on the synthetic timing-code task.
//!
//! Loads a TOML run config (the shipped delay-advantage recipe by default),
//! trains with event-based exact gradients, and prints per-epoch metrics plus
//! the final confusion matrix.
//!
//!     cargo run --release --example train_synthetic [CONFIG.toml]

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use delayprop::config::RunConfig;
use delayprop::train::{evaluate, train_epoch, Adam};

fn main() {
    let config_path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic_delays.toml"));
    let cfg = RunConfig::load(&config_path).unwrap();
    cfg.validate().unwrap();
    let tc = cfg.train.train_config();

    let data = cfg.load_data().unwrap();
    let mut net = cfg.build_network(data.n_channels, data.n_classes).unwrap();
    println!(
        "{} train / {} test samples, {} channels, {} classes",
        data.train.len(),
        data.test.len(),
        data.n_channels,
        data.n_classes
    );

    let mut adam = Adam::new(&net, &tc);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    for epoch in 0..tc.epochs {
        let stats = train_epoch(&mut net, &mut adam, &data.train, &tc, &mut rng).unwrap();
        if (epoch + 1) % 5 == 0 || epoch == 0 {
            let ev = evaluate(&net, &data.test, &tc.loss, data.n_classes).unwrap();
            println!(
                "epoch {:>3}  loss {:.4}  train acc {:.3}  test acc {:.3}  hidden rate {:>5.1} Hz",
                epoch + 1,
                stats.mean_loss,
                stats.accuracy,
                ev.accuracy,
                stats.mean_hidden_rate_hz
            );
        }
    }

    let ev = evaluate(&net, &data.test, &tc.loss, data.n_classes).unwrap();
    println!("final test accuracy {:.4} (mean loss {:.4})", ev.accuracy, ev.mean_loss);
    println!("confusion (rows = true class):");
    for row in ev.confusion.rows() {
        println!("  {row}");
    }
}
