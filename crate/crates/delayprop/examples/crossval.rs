//! Stratified k-fold cross-validation on the synthetic task.
//!
//! Each fold reinitializes the network with a fresh seed, trains on the
//! remaining folds, and evaluates held out — the standard recipe when a
//! dataset ships without a validation split.
//!
//!     cargo run --release --example crossval

use std::path::Path;

use delayprop::config::RunConfig;
use delayprop::train::cross_validate;

fn main() {
    let config_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic_delays.toml");
    let mut cfg = RunConfig::load(&config_path).unwrap();
    cfg.train.epochs = Some(15); // keep the demo quick: 5 folds x 15 epochs
    cfg.validate().unwrap();
    let tc = cfg.train.train_config();
    let data = cfg.load_data().unwrap();
    let template = cfg.build_network(data.n_channels, data.n_classes).unwrap();

    let report = cross_validate(
        &template,
        &cfg.init.init_config(),
        &data.train,
        data.n_classes,
        5,
        &tc,
    )
    .unwrap();

    for (k, fold) in report.folds.iter().enumerate() {
        println!(
            "fold {k}: accuracy {:.3}  mean loss {:.4}  ({} held-out samples)",
            fold.accuracy, fold.mean_loss, fold.n_samples
        );
    }
    println!(
        "cv accuracy {:.4} +/- {:.4} over {} folds",
        report.mean_accuracy,
        report.std_accuracy,
        report.folds.len()
    );
}
