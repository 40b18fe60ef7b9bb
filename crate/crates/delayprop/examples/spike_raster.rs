//! Simulate one synthetic sample and print an ASCII spike raster.
//!
//! Shows the simulation primitives end to end: generate a timing-coded
//! sample, build a small delay network, run the clock-driven forward pass,
//! and inspect the `SpikeRecord` and readout voltages it returns.
//!
//!     cargo run --release --example spike_raster

use delayprop::data::{bin_dataset, synthetic_delay_task, SyntheticConfig};
use delayprop::model::{build_network, init_parameters, InitConfig, NetworkSpec, PopulationKind, PopulationSpec, ProjectionSpec};
use delayprop::sim::{readout_scores, run_forward};

fn main() {
    let task_cfg = SyntheticConfig {
        n_channels: 32,
        n_train_per_class: 1,
        n_test_per_class: 1,
        ..SyntheticConfig::default()
    };
    let task = synthetic_delay_task(&task_cfg).unwrap();
    let n_timesteps = 96;
    let samples = bin_dataset(&task.train, 1.0, n_timesteps).unwrap();
    let sample = &samples[0];

    let spec = NetworkSpec {
        dt: 1.0,
        n_timesteps,
        populations: vec![
            PopulationSpec::new("in", 32, PopulationKind::Input),
            PopulationSpec::new("hid", 16, PopulationKind::Hidden),
            PopulationSpec::new("out", 4, PopulationKind::Output),
        ],
        projections: vec![
            ProjectionSpec::zeros("in", "hid", 32, 16, 40.0),
            ProjectionSpec::zeros("hid", "out", 16, 4, 40.0),
        ],
    };
    let mut net = build_network(spec).unwrap();
    init_parameters(
        &mut net,
        &InitConfig {
            weight_mean: 0.5,
            weight_sd: 0.3,
            delay_low: 0.0,
            delay_high: 20.0,
            seed: 1,
            ..InitConfig::default()
        },
    )
    .unwrap();

    let (record, trace) = run_forward(&net, &sample.events).unwrap();

    // One row per neuron, one column per 2 timesteps.
    let cols = n_timesteps / 2;
    for (pop, name, size) in [(0usize, "in", 32usize), (1, "hid", 16)] {
        println!("-- population `{name}` --");
        for neuron in 0..size as u32 {
            let mut row = vec![b'.'; cols];
            for e in record.events.iter().filter(|e| e.pop == pop as u32 && e.neuron == neuron) {
                row[(e.step as usize / 2).min(cols - 1)] = b'|';
            }
            println!("{neuron:>3} {}", String::from_utf8(row).unwrap());
        }
    }

    let scores = readout_scores(&trace, net.dt(), 128.0);
    println!("-- readout --");
    println!("label {}   scores {:?}", sample.label, scores.iter().map(|s| (s * 100.0).round() / 100.0).collect::<Vec<_>>());
    println!(
        "{} spikes total, predicted class {}",
        record.n_events(),
        scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(k, _)| k)
            .unwrap()
    );
}
