//! Shipping acceptance checks, one per guaranteed property.
//!
//! Each test prints exactly one `criterion N (...): PASS/FAIL — ...` line with
//! its pinned tolerances, so `cargo test --test acceptance -- --nocapture`
//! doubles as a scorecard. Criterion 8 (full-scale keyword-spotting
//! reproduction) is a documented multi-hour script, not a gating test; here it
//! is covered by an artifact check plus an `#[ignore]`d opt-in runner.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use delayprop::config::RunConfig;
use delayprop::eventprop::{
    backward_with_stats, gradcheck, loss_and_seed, CoordStatus, GradcheckConfig, LossConfig,
};
use delayprop::model::{
    build_network, init_parameters, InitConfig, Network, NetworkSpec, PopulationKind,
    PopulationSpec, ProjectionSpec,
};
use delayprop::quant::{
    emulate_fixed_point, export_exchange, import_exchange, quantize, FixedPointConfig,
    MAX_DELAY_STEPS,
};
use delayprop::sim::{readout_scores, run_forward, InputEvent, OutputTrace};
use delayprop::train::{evaluate, train_epoch, Adam};

/// Print the scorecard line, then enforce it.
fn report(criterion: usize, label: &str, pass: bool, detail: &str) {
    println!(
        "criterion {criterion} ({label}): {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} ({label}) failed: {detail}");
}

fn workspace_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

/// A small random net, used by the property criteria. `weight_mean = 0.9`
/// gives lively spiking; gentler means keep the integer emulator inside its
/// 24-bit state headroom.
fn random_net(seed: u64, n_timesteps: usize, max_delay: f64, weight_mean: f64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let n_in = rng.gen_range(3..=10);
    let n_hid = rng.gen_range(4..=20);
    let n_out = rng.gen_range(2..=3);
    let recurrent = rng.gen_bool(0.5);
    let mut projections = vec![
        ProjectionSpec::zeros("in", "hid", n_in, n_hid, max_delay),
        ProjectionSpec::zeros("hid", "out", n_hid, n_out, max_delay),
    ];
    if recurrent {
        projections.insert(1, ProjectionSpec::zeros("hid", "hid", n_hid, n_hid, max_delay));
    }
    let spec = NetworkSpec {
        dt: 1.0,
        n_timesteps,
        populations: vec![
            PopulationSpec::new("in", n_in, PopulationKind::Input),
            PopulationSpec::new("hid", n_hid, PopulationKind::Hidden),
            PopulationSpec::new("out", n_out, PopulationKind::Output),
        ],
        projections,
    };
    let mut net = build_network(spec).unwrap();
    init_parameters(
        &mut net,
        &InitConfig {
            weight_mean,
            weight_sd: weight_mean * 2.0 / 3.0,
            delay_low: 0.0,
            delay_high: (max_delay - 1.0).max(0.0),
            seed,
            ..InitConfig::default()
        },
    )
    .unwrap();
    net
}

/// Sorted random input events over the first 60% of the horizon.
fn random_input(seed: u64, n_channels: usize, n_timesteps: usize, n_events: usize) -> Vec<InputEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5bd1_e995);
    let horizon = (n_timesteps * 3 / 5).max(1) as u32;
    let mut events: Vec<InputEvent> = (0..n_events)
        .map(|_| InputEvent {
            step: rng.gen_range(0..horizon),
            channel: rng.gen_range(0..n_channels as u32),
        })
        .collect();
    events.sort_by_key(|e| (e.step, e.channel));
    events
}

#[test]
fn criterion_1_gradient_exactness() {
    let t0 = Instant::now();
    let loss_cfg = LossConfig {
        reg_strength: 0.0,
        ..LossConfig::default()
    };
    let (mut pass, mut fail, mut skipped) = (0usize, 0usize, 0usize);
    let mut meaningful = 0usize;
    let mut worst = 0.0f64;
    for i in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + i);
        let n_timesteps = rng.gen_range(100..=200);
        let mut net = random_net(300 + i, n_timesteps, 12.0, 0.9);
        let input = random_input(600 + i, net.n_inputs(), n_timesteps, 3 * net.n_inputs());
        let label = rng.gen_range(0..net.n_outputs());
        let cfg = GradcheckConfig {
            n_weight_coords: 64,
            n_delay_coords: 64,
            seed: 77 + i,
            ..GradcheckConfig::default()
        };
        assert_eq!((cfg.tol_rel, cfg.tol_abs), (1e-3, 1e-6), "pinned tolerances");
        let rep = gradcheck(&mut net, &input, label, &loss_cfg, &cfg).unwrap();
        pass += rep.n_pass;
        fail += rep.n_fail;
        skipped += rep.n_skipped;
        meaningful += rep
            .coords
            .iter()
            .filter(|c| {
                matches!(c.status, CoordStatus::Pass | CoordStatus::Fail)
                    && c.analytic.abs() > cfg.tol_abs
            })
            .count();
        worst = worst.max(rep.max_rel_err);
        assert!(rep.n_pass > 0, "net {i} produced no stable coordinates");
    }
    let stable = pass + fail;
    let frac = pass as f64 / stable as f64;
    // Guard against a vacuous pass: a softmax-saturated or silent population
    // would put every analytic gradient under tol_abs, where the absolute
    // term alone decides. Require that a healthy share of coordinates carry
    // gradients the relative tolerance actually has to certify.
    let frac_meaningful = meaningful as f64 / stable as f64;
    let secs = t0.elapsed().as_secs_f64();
    report(
        1,
        "gradient exactness",
        frac >= 0.95 && frac_meaningful >= 0.30 && secs <= 120.0,
        &format!(
            "{pass}/{stable} stable coords ({:.1}%) within 1e-3 rel / 1e-6 abs of central \
             differences over 20 random nets (64+64 coords each, {skipped} unstable skipped, \
             worst rel err {worst:.2e}, {:.1}% of coords carry |grad| > 1e-6, need >= 30%); \
             {secs:.1} s (budget 120 s)",
            100.0 * frac,
            100.0 * frac_meaningful
        ),
    );
}

/// Train a network exactly as the `train` command would, returning final test
/// accuracy.
fn train_from_config(cfg: &RunConfig) -> f64 {
    cfg.validate().unwrap();
    let tc = cfg.train.train_config();
    let data = cfg.load_data().unwrap();
    let mut net = cfg.build_network(data.n_channels, data.n_classes).unwrap();
    let mut adam = Adam::new(&net, &tc);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    for _ in 0..tc.epochs {
        train_epoch(&mut net, &mut adam, &data.train, &tc, &mut rng).unwrap();
    }
    evaluate(&net, &data.test, &tc.loss, data.n_classes).unwrap().accuracy
}

#[test]
fn criterion_2_delay_advantage() {
    let t0 = Instant::now();
    let cfg = RunConfig::load(&workspace_path("configs/synthetic_delays.toml")).unwrap();
    let acc_delays = train_from_config(&cfg);

    // Identical architecture, delays frozen at zero (what `--freeze-delays`
    // does to the same config).
    let mut frozen = cfg.clone();
    frozen.network.delays_trainable = false;
    frozen.init.delay_low = 0.0;
    frozen.init.delay_high = 0.0;
    let acc_frozen = train_from_config(&frozen);

    let secs = t0.elapsed().as_secs_f64();
    let gap = acc_delays - acc_frozen;
    report(
        2,
        "delay advantage",
        acc_delays >= 0.95 && acc_frozen <= 0.75 && gap >= 0.20 && secs <= 600.0,
        &format!(
            "4 classes / 64 channels / 400 train / 200 test, 50 epochs: trainable delays \
             {:.1}% (need >= 95), frozen-at-zero {:.1}% (need <= 75), gap {:.1} points \
             (need >= 20); {secs:.1} s (budget 600 s)",
            100.0 * acc_delays,
            100.0 * acc_frozen,
            100.0 * gap
        ),
    );
}

#[test]
fn criterion_3_quantization_parity() {
    // Train the float parent on the synthetic task (same recipe as
    // criterion 2), then quantize, push through the exchange file, and run
    // every test sample on the integer emulator.
    let cfg = RunConfig::load(&workspace_path("configs/synthetic_delays.toml")).unwrap();
    cfg.validate().unwrap();
    let tc = cfg.train.train_config();
    let data = cfg.load_data().unwrap();
    let mut net = cfg.build_network(data.n_channels, data.n_classes).unwrap();
    let mut adam = Adam::new(&net, &tc);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    for _ in 0..tc.epochs {
        train_epoch(&mut net, &mut adam, &data.train, &tc, &mut rng).unwrap();
    }

    let t0 = Instant::now();
    let (model, _) = quantize(&net);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.net.h5");
    export_exchange(&path, &model, false).unwrap();
    let model = import_exchange(&path).unwrap();

    let dt = net.dt();
    let n_timesteps = net.n_timesteps();
    let tau_loss = tc.loss.tau_loss_ms(dt, n_timesteps);
    let fp = FixedPointConfig::default();
    let argmax = |s: &[f64]| {
        s.iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(k, _)| k as u32)
            .unwrap()
    };

    let (mut agree, mut float_ok, mut fixed_ok) = (0usize, 0usize, 0usize);
    for sample in &data.test {
        let (_, trace) = run_forward(&net, &sample.events).unwrap();
        let float_pred = argmax(&readout_scores(&trace, dt, tau_loss));
        let (_, fix_trace, _) = emulate_fixed_point(&model, &sample.events, n_timesteps, &fp).unwrap();
        let fix_out = OutputTrace {
            voltages: fix_trace.voltages,
        };
        let fixed_pred = argmax(&readout_scores(&fix_out, dt, tau_loss));
        agree += (float_pred == fixed_pred) as usize;
        float_ok += (float_pred == sample.label) as usize;
        fixed_ok += (fixed_pred == sample.label) as usize;
    }
    let n = data.test.len() as f64;
    let acc_float = float_ok as f64 / n;
    let acc_fixed = fixed_ok as f64 / n;
    let agreement = agree as f64 / n;
    let secs = t0.elapsed().as_secs_f64();
    report(
        3,
        "quantization parity",
        (acc_fixed - acc_float).abs() <= 0.03 && agreement >= 0.95 && secs <= 120.0,
        &format!(
            "quantized+emulated {:.1}% vs float parent {:.1}% (need within +/- 3 points), \
             per-sample agreement {:.1}% (need >= 95) on {} samples; {secs:.1} s after \
             training (budget 120 s)",
            100.0 * acc_fixed,
            100.0 * acc_float,
            100.0 * agreement,
            data.test.len()
        ),
    );
}

#[test]
fn criterion_4_hardware_constraints() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.net.h5");
    let mut checked_weights = 0usize;
    let mut checked_delays = 0usize;
    for i in 0..200u64 {
        // Delay inits deliberately overrun the cap (up to 70 ms at 1 ms
        // steps) so the clamp path is exercised, not just observed.
        let net = random_net(4000 + i, 64, 70.0, 0.9);
        let (model, _) = quantize(&net);
        export_exchange(&path, &model, true).unwrap();
        let back = import_exchange(&path).unwrap();
        for p in &back.projections {
            checked_weights += p.weights.len();
            checked_delays += p.delay_steps.len();
            assert!(
                p.weights.iter().all(|&w| (-127..=127).contains(&(w as i32))),
                "weight outside [-127, 127] in model {i}"
            );
            assert!(
                p.delay_steps.iter().all(|&d| d <= MAX_DELAY_STEPS),
                "delay beyond {MAX_DELAY_STEPS} steps in model {i}"
            );
        }
    }

    // A crafted file with delay = 63 must be refused on import.
    let net = random_net(9999, 64, 20.0, 0.9);
    let (model, _) = quantize(&net);
    export_exchange(&path, &model, true).unwrap();
    {
        let file = hdf5::File::open_rw(&path).unwrap();
        let ds = file.dataset("net/proj0/delays").unwrap();
        let mut delays = ds.read_2d::<u8>().unwrap();
        delays[[0, 0]] = 63;
        ds.write(&delays).unwrap();
    }
    let rejected = match import_exchange(&path) {
        Err(e) => format!("{e}").contains("delay out of range"),
        Ok(_) => false,
    };

    let secs = t0.elapsed().as_secs_f64();
    report(
        4,
        "hardware constraint enforcement",
        rejected && secs <= 60.0,
        &format!(
            "200 random models serialized: {checked_weights} weights all in [-127, 127], \
             {checked_delays} delays all in [0, {MAX_DELAY_STEPS}] steps; crafted delay-63 \
             file rejected on import: {rejected}; {secs:.1} s (budget 60 s)"
        ),
    );
}

#[test]
fn criterion_5_exchange_round_trip() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.net.h5");
    let fp = FixedPointConfig::default();
    let mut identical = 0usize;
    for i in 0..100u64 {
        let net = random_net(7000 + i, 48, 12.0, 0.35);
        let (model, _) = quantize(&net);
        export_exchange(&path, &model, true).unwrap();
        let back = import_exchange(&path).unwrap();
        assert_eq!(back, model, "round-trip changed model {i}");

        let input = random_input(7100 + i, model.populations[0].size, 48, 24);
        let (rec_a, tr_a, st_a) = emulate_fixed_point(&model, &input, 48, &fp).unwrap();
        let (rec_b, tr_b, st_b) = emulate_fixed_point(&back, &input, 48, &fp).unwrap();
        assert_eq!(rec_a, rec_b, "round-trip changed emulated spikes of model {i}");
        assert_eq!(tr_a.q, tr_b.q, "round-trip changed emulated state of model {i}");
        assert_eq!(
            (st_a.synaptic_events, st_a.neuron_updates),
            (st_b.synaptic_events, st_b.neuron_updates)
        );
        identical += 1;
    }
    let secs = t0.elapsed().as_secs_f64();
    report(
        5,
        "exchange-file round-trip",
        identical == 100 && secs <= 60.0,
        &format!(
            "{identical}/100 random quantized models: import(export(m)) bit-identical and \
             emulator outputs identical pre/post; {secs:.1} s (budget 60 s)"
        ),
    );
}

#[test]
fn criterion_6_memory_contract() {
    // A silent network (zero weights, empty input) emits no spikes; doubling
    // the horizon must leave backward auxiliary storage unchanged within 5%,
    // i.e. the sweep stores per-event state, not per-(neuron x timestep)
    // state. The backward signature itself only admits (record, seeds,
    // parameters) — there is no trace argument to smuggle dense state in.
    let loss_cfg = LossConfig::default();
    let mut aux = Vec::new();
    for n_timesteps in [200usize, 400] {
        let spec = NetworkSpec {
            dt: 1.0,
            n_timesteps,
            populations: vec![
                PopulationSpec::new("in", 8, PopulationKind::Input),
                PopulationSpec::new("hid", 32, PopulationKind::Hidden),
                PopulationSpec::new("out", 4, PopulationKind::Output),
            ],
            projections: vec![
                ProjectionSpec::zeros("in", "hid", 8, 32, 10.0),
                ProjectionSpec::zeros("hid", "out", 32, 4, 10.0),
            ],
        };
        let net = build_network(spec).unwrap();
        let (record, trace) = run_forward(&net, &[]).unwrap();
        assert_eq!(record.n_events(), 0, "silent net must stay silent");
        let seeds = loss_and_seed(&trace, 0, net.dt(), &loss_cfg).unwrap();
        let (_, stats) = backward_with_stats(&net, &record, &seeds, &loss_cfg).unwrap();
        aux.push(stats.aux_bytes as f64);
    }
    let rel = (aux[1] - aux[0]).abs() / aux[0];
    report(
        6,
        "memory contract",
        rel <= 0.05,
        &format!(
            "backward aux storage on a silent 8-32-4 net: {} B at T=200 vs {} B at T=400, \
             relative change {:.2}% (need <= 5%); backward takes only \
             (SpikeRecord, seeds, parameters)",
            aux[0], aux[1],
            100.0 * rel
        ),
    );
}

#[test]
fn criterion_7_determinism() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("run.toml");
    std::fs::write(
        &config_path,
        r#"
[network]
hidden = [16]
n_timesteps = 64

[train]
epochs = 3
batch_size = 8
lr_weights = 0.01
lr_delays = 0.1
seed = 7

[data]
kind = "synthetic"

[data.synthetic]
n_classes = 4
n_channels = 16
n_train_per_class = 20
n_test_per_class = 8
n_groups = 4
window_ms = 50.0
jitter_ms = 1.0
min_group_gap_ms = 10.0
min_separation_ms = 6.0
seed = 11
"#,
    )
    .unwrap();

    // Same seed, different thread counts: --deterministic pins fixed-order
    // reductions and zeroes wallclock columns, so the artifacts must match
    // byte for byte.
    let mut outs = Vec::new();
    for (run, threads) in [("a", "1"), ("b", "3")] {
        let out = dir.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_delayprop"))
            .args([
                "--deterministic",
                "--threads",
                threads,
                "train",
                "--config",
                config_path.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success(), "training run {run} failed");
        outs.push(out);
    }
    let ckpt_a = std::fs::read(outs[0].join("checkpoint.bin")).unwrap();
    let ckpt_b = std::fs::read(outs[1].join("checkpoint.bin")).unwrap();
    let csv_a = std::fs::read(outs[0].join("metrics.csv")).unwrap();
    let csv_b = std::fs::read(outs[1].join("metrics.csv")).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    report(
        7,
        "determinism",
        ckpt_a == ckpt_b && csv_a == csv_b,
        &format!(
            "two --deterministic runs (1 vs 3 threads, same seed): checkpoint.bin identical: \
             {}, metrics.csv identical: {} ({} B / {} B); {secs:.1} s",
            ckpt_a == ckpt_b,
            csv_a == csv_b,
            ckpt_a.len(),
            csv_a.len()
        ),
    );
}

#[test]
fn criterion_8_reproduction_artifacts() {
    // The full-scale keyword-spotting reproduction is a documented multi-hour
    // script, deliberately not gating. This test pins that the script and its
    // configs exist, parse, and state the reproduction targets.
    let script = workspace_path("scripts/reproduce_shd.sh");
    let script_ok = script.is_file()
        && Command::new("bash")
            .args(["-n", script.to_str().unwrap()])
            .status()
            .map(|s| s.success())
            .unwrap_or(false);
    let text = std::fs::read_to_string(&script).unwrap_or_default();
    let targets_ok = text.contains("86.9") && text.contains("87.0");

    let ff = RunConfig::load(&workspace_path("configs/shd_ff_delays.toml")).unwrap();
    let rc = RunConfig::load(&workspace_path("configs/shd_recurrent.toml")).unwrap();
    ff.validate().unwrap();
    rc.validate().unwrap();
    let shapes_ok = ff.network.hidden == vec![512, 512]
        && ff.network.delays_trainable
        && !ff.network.recurrent
        && rc.network.hidden == vec![512]
        && !rc.network.delays_trainable
        && rc.network.recurrent;

    report(
        8,
        "full-scale reproduction artifacts",
        script_ok && targets_ok && shapes_ok,
        &format!(
            "reproduce_shd.sh parses: {script_ok}, states targets 86.9/87.0 +/- 3: \
             {targets_ok}, configs pin 700-512-512-20 ff+delays and 700-512-20 recurrent: \
             {shapes_ok}; run `scripts/reproduce_shd.sh` with the dataset for the multi-hour \
             non-gating reproduction (see `cargo test ... criterion_8_full_scale -- --ignored`)"
        ),
    );
}

#[test]
#[ignore = "multi-hour full-scale run; needs the keyword-spotting dataset on disk"]
fn criterion_8_full_scale_reproduction() {
    // Opt-in: cargo test --test acceptance criterion_8_full_scale -- --ignored
    // Expects data/shd/shd_train.h5 and shd_test.h5 (or SHD_DIR env var).
    let shd_dir = std::env::var("SHD_DIR").unwrap_or_else(|_| {
        workspace_path("data/shd").to_str().unwrap().to_string()
    });
    let out = Command::new("bash")
        .arg(workspace_path("scripts/reproduce_shd.sh"))
        .arg(&shd_dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "reproduction script failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    let accs: Vec<f64> = stdout
        .lines()
        .filter(|l| l.starts_with("eval: "))
        .filter_map(|l| {
            l.split_whitespace()
                .find_map(|w| w.strip_prefix("accuracy="))
                .and_then(|v| v.parse().ok())
        })
        .collect();
    assert_eq!(accs.len(), 2, "expected two eval lines, got: {stdout}");
    let pass = (accs[0] - 0.869).abs() <= 0.03 && (accs[1] - 0.870).abs() <= 0.03;
    report(
        8,
        "full-scale reproduction",
        pass,
        &format!(
            "feedforward+delays {:.1}% (target 86.9 +/- 3), recurrent {:.1}% (target 87.0 \
             +/- 3)",
            100.0 * accs[0],
            100.0 * accs[1]
        ),
    );
}
