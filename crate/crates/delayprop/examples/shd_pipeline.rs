//! End-to-end pipeline on a real event dataset.
//!
//! Loads an HDF5 spiking dataset (ragged `spikes/times` in seconds,
//! `spikes/units`, `labels`), bins it onto the simulation grid, and trains a
//! small delay network for a few epochs as a smoke run. The full-scale
//! reproduction (512-wide hidden layers, multi-hour) lives in
//! `scripts/reproduce_shd.sh` with configs under `configs/`.
//!
//!     cargo run --release --example shd_pipeline -- DATA_DIR
//!
//! where DATA_DIR contains `shd_train.h5` and `shd_test.h5`.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use delayprop::data::{bin_dataset, load_hdf5_dataset};
use delayprop::model::{build_network, init_parameters, InitConfig, NetworkSpec, PopulationKind, PopulationSpec, ProjectionSpec};
use delayprop::train::{evaluate, train_epoch, Adam, TrainConfig};

fn main() {
    let Some(dir) = std::env::args().nth(1).map(PathBuf::from) else {
        println!("usage: shd_pipeline DATA_DIR");
        println!("DATA_DIR must contain shd_train.h5 and shd_test.h5 (event format:");
        println!("spikes/times in seconds, spikes/units, labels). Download the two");
        println!(".h5.gz files from the dataset distribution page and gunzip them.");
        return;
    };
    let train_ds = load_hdf5_dataset(&dir.join("shd_train.h5")).unwrap();
    let test_ds = load_hdf5_dataset(&dir.join("shd_test.h5")).unwrap();
    println!(
        "loaded {} train / {} test samples, {} channels, {} classes",
        train_ds.n_samples(),
        test_ds.n_samples(),
        train_ds.n_channels,
        train_ds.n_classes
    );

    // Smoke scale: 2 ms bins over the first second, a 128-neuron hidden
    // layer, a random 1024-sample training subset.
    let (dt, n_timesteps) = (2.0, 500);
    let mut train = bin_dataset(&train_ds, dt, n_timesteps).unwrap();
    let test = bin_dataset(&test_ds, dt, n_timesteps).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    {
        use rand::seq::SliceRandom;
        train.shuffle(&mut rng);
        train.truncate(1024);
    }

    let spec = NetworkSpec {
        dt,
        n_timesteps,
        populations: vec![
            PopulationSpec::new("in", train_ds.n_channels, PopulationKind::Input),
            PopulationSpec::new("hid", 128, PopulationKind::Hidden),
            PopulationSpec::new("out", train_ds.n_classes, PopulationKind::Output),
        ],
        projections: vec![
            ProjectionSpec::zeros("in", "hid", train_ds.n_channels, 128, 62.0),
            ProjectionSpec::zeros("hid", "out", 128, train_ds.n_classes, 62.0),
        ],
    };
    let mut net = build_network(spec).unwrap();
    init_parameters(
        &mut net,
        &InitConfig {
            weight_mean: 0.06,
            weight_sd: 0.03,
            delay_low: 0.0,
            delay_high: 62.0,
            seed: 1,
            ..InitConfig::default()
        },
    )
    .unwrap();

    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 32,
        lr_weights: 0.002,
        lr_delays: 0.2,
        seed: 1,
        ..TrainConfig::default()
    };
    let mut adam = Adam::new(&net, &cfg);
    for epoch in 0..cfg.epochs {
        let stats = train_epoch(&mut net, &mut adam, &train, &cfg, &mut rng).unwrap();
        println!(
            "epoch {}  loss {:.4}  train acc {:.3}  hidden rate {:.1} Hz",
            epoch + 1,
            stats.mean_loss,
            stats.accuracy,
            stats.mean_hidden_rate_hz
        );
    }
    let ev = evaluate(&net, &test, &cfg.loss, train_ds.n_classes).unwrap();
    println!("smoke-run test accuracy {:.3} (full-scale recipe: scripts/reproduce_shd.sh)", ev.accuracy);
}
