//! Command-line entry points: train, evaluate, cross-validate, gradcheck,
//! export, emulate, parity, and a cost-proxy benchmark.
//!
//! Conventions shared by every subcommand:
//! - stdout carries exactly one summary line per command (pipe-friendly);
//!   progress and diagnostics go to stderr via `log`/`env_logger`.
//! - exit codes: 0 success, 1 internal error (including a failed gradcheck),
//!   2 usage or input error.
//! - flags win over config-file values.
//! - every command that writes artifacts also writes a [`RunManifest`]
//!   next to them.
//! - `--deterministic` zeroes all wallclock fields so two runs with the same
//!   seed produce bit-identical files; the parallel reduction order is fixed
//!   regardless, so this flag only affects timing fields.
//! - `--threads N` (or the `DELAYPROP_THREADS` environment variable) caps the
//!   worker pool.

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::{DataConfig, RunConfig};
use crate::data::BinnedSample;
use crate::error::{Error, Result};
use crate::eventprop::{gradcheck, write_gradcheck_csv, GradcheckConfig};
use crate::manifest::RunManifest;
use crate::model::{count_parameters, Network};
use crate::quant::{
    emulate_fixed_point, export_exchange, import_exchange, parity_report, quantize,
    FixedPointConfig, QuantizedModel,
};
use crate::sim::{readout_scores, run_forward, write_raster, OutputTrace};
use crate::train::{
    cross_validate, evaluate, load_checkpoint, save_checkpoint, train_epoch, Adam, Checkpoint,
    MetricsRow, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "delayprop",
    version = crate::VERSION,
    about = "Train spiking networks with learnable synaptic delays and deploy them as int8 models"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Cap worker threads (default: DELAYPROP_THREADS or all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Zero wallclock fields so outputs are bit-reproducible.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network; writes checkpoint.bin, metrics.csv, and a manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// K-fold cross-validation over the training split.
    Cv(CvArgs),
    /// Compare adjoint gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Quantize a checkpoint and write the exchange file.
    Export(ExportArgs),
    /// Run the fixed-point emulator over a dataset split.
    Emulate(EmulateArgs),
    /// Float-vs-fixed parity report for a checkpoint and its exchange file.
    Parity(ParityArgs),
    /// Software cost proxies per sample (not hardware energy figures).
    Bench(BenchArgs),
}

/// `--data`/`--data-test` replace the config's `[data]` section with HDF5
/// paths; with only `--data` given, both splits read the same file.
#[derive(Args, Debug)]
struct DataOverride {
    /// Training-split HDF5 file (overrides the config's [data] section).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Test-split HDF5 file (defaults to --data when omitted).
    #[arg(long)]
    data_test: Option<PathBuf>,
}

impl DataOverride {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(train) = &self.data {
            let test = self.data_test.clone().unwrap_or_else(|| train.clone());
            if self.data_test.is_none() {
                warn!("--data without --data-test: evaluating on the training file");
            }
            cfg.data = DataConfig::Hdf5 {
                train: train.clone(),
                test,
            };
        } else if let Some(test) = &self.data_test {
            if let DataConfig::Hdf5 { test: t, .. } = &mut cfg.data {
                *t = test.clone();
            } else {
                warn!("--data-test ignored: config data is synthetic and --data was not given");
            }
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Run-configuration TOML file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    data: DataOverride,
    /// Override [train] epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Override [train] seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Freeze all delays at zero (weights still train).
    #[arg(long)]
    freeze_delays: bool,
    /// Evaluate the test split every N epochs (0 = only after training).
    #[arg(long, default_value_t = 1)]
    eval_every: usize,
    /// Validate the config, build the network, print parameter counts,
    /// write nothing.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Config supplying the [data] section (defaults apply when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataOverride,
    /// Evaluate the training split instead of the test split.
    #[arg(long)]
    train_split: bool,
    /// Write confusion.csv and a manifest here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a spike raster of one sample to this file.
    #[arg(long)]
    raster: Option<PathBuf>,
    /// Sample index for --raster.
    #[arg(long, default_value_t = 0)]
    sample: usize,
}

#[derive(Args)]
struct CvArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    data: DataOverride,
    /// Number of folds.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Write cv.json and a manifest here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    data: DataOverride,
    /// Training-split sample to probe.
    #[arg(long, default_value_t = 0)]
    sample: usize,
    #[arg(long, default_value_t = 24)]
    weight_coords: usize,
    #[arg(long, default_value_t = 24)]
    delay_coords: usize,
    /// Coordinate-draw seed.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Write the per-coordinate CSV here (plus a manifest).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Exchange file to write.
    #[arg(long)]
    out: PathBuf,
    /// Replace an existing file.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct EmulateArgs {
    /// Exchange file written by `export`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataOverride,
    /// Simulation horizon in steps (default: config [network] n_timesteps).
    #[arg(long)]
    timesteps: Option<usize>,
    /// Emulate at most N samples.
    #[arg(long)]
    limit: Option<usize>,
    /// Also run this float checkpoint and report float-vs-fixed parity.
    #[arg(long)]
    compare: Option<PathBuf>,
    /// Write per-sample CSV and a manifest here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ParityArgs {
    /// Exchange file written by `export`.
    #[arg(long)]
    model: PathBuf,
    /// Float parent checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataOverride,
    #[arg(long)]
    limit: Option<usize>,
    /// Write parity.csv, parity.json, and a manifest here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Exchange file written by `export`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataOverride,
    /// Horizon in steps (default: config [network] n_timesteps).
    #[arg(long)]
    timesteps: Option<usize>,
    /// Number of test samples to run.
    #[arg(long, default_value_t = 32)]
    samples: usize,
    /// Write bench.json and a manifest here.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parse arguments, run, and map errors to exit codes.
pub fn main() -> i32 {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    init_threads(cli.threads);
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}

fn init_threads(flag: Option<usize>) {
    let n = flag.or_else(|| {
        std::env::var("DELAYPROP_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = n {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            warn!("thread pool already initialized: {e}");
        }
    }
}

fn run(cli: Cli) -> Result<i32> {
    let det = cli.deterministic;
    match cli.command {
        Command::Train(args) => cmd_train(args, det),
        Command::Eval(args) => cmd_eval(args, det),
        Command::Cv(args) => cmd_cv(args, det),
        Command::Gradcheck(args) => cmd_gradcheck(args, det),
        Command::Export(args) => cmd_export(args, det),
        Command::Emulate(args) => cmd_emulate(args, det),
        Command::Parity(args) => cmd_parity(args, det),
        Command::Bench(args) => cmd_bench(args, det),
    }
}

// ───────────────────────────── shared helpers ──────────────────────────────

fn load_config(path: Option<&Path>, data: &DataOverride) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    data.apply(&mut cfg);
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn create_file(path: &Path) -> Result<std::fs::File> {
    std::fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))
}

fn config_snapshot(cfg: &RunConfig) -> Option<serde_json::Value> {
    serde_json::to_value(cfg).ok()
}

fn checkpoint_network(path: &Path) -> Result<Network> {
    let (net, _, _) = load_checkpoint(path)?.restore()?;
    Ok(net)
}

fn argmax(scores: &[f64]) -> usize {
    scores
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("scores are finite"))
        .map(|(k, _)| k)
        .expect("at least one output")
}

/// Check that a dataset fits a network's input layer.
fn check_channels(n_channels: usize, n_inputs: usize, what: &str) -> Result<()> {
    if n_channels > n_inputs {
        return Err(Error::InvalidConfig(format!(
            "dataset has {n_channels} channels but the {what} has {n_inputs} inputs"
        )));
    }
    Ok(())
}

// ─────────────────────────────── train ─────────────────────────────────────

fn cmd_train(args: TrainArgs, det: bool) -> Result<i32> {
    let started = Instant::now();
    let mut cfg = load_config(Some(&args.config), &args.data)?;
    if let Some(e) = args.epochs {
        cfg.train.epochs = Some(e);
    }
    if let Some(s) = args.seed {
        cfg.train.seed = Some(s);
    }
    if args.freeze_delays {
        cfg.network.delays_trainable = false;
        cfg.init.delay_low = 0.0;
        cfg.init.delay_high = 0.0;
    }
    cfg.validate()?;
    let tc: TrainConfig = cfg.train.train_config();

    let data = cfg.load_data()?;
    let mut net = cfg.build_network(data.n_channels, data.n_classes)?;
    let counts = count_parameters(&net);

    if args.dry_run {
        let pops: Vec<String> = net
            .spec()
            .populations
            .iter()
            .map(|p| format!("{}:{}", p.name, p.size))
            .collect();
        println!(
            "dry-run: populations={} projections={} weights={} trainable_delays={} timesteps={}",
            pops.join(","),
            net.spec().projections.len(),
            counts.weights,
            counts.trainable_delays,
            net.n_timesteps()
        );
        return Ok(0);
    }

    ensure_dir(&args.out)?;
    let metrics_path = args.out.join("metrics.csv");
    let ckpt_path = args.out.join("checkpoint.bin");
    let mut metrics = create_file(&metrics_path)?;
    crate::train::write_metrics_header(&mut metrics)?;

    let mut adam = Adam::new(&net, &tc);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    info!(
        "training {} epochs on {} samples ({} weights, {} trainable delays)",
        tc.epochs,
        data.train.len(),
        counts.weights,
        counts.trainable_delays
    );

    for epoch in 0..tc.epochs {
        let t0 = Instant::now();
        let stats = train_epoch(&mut net, &mut adam, &data.train, &tc, &mut rng)?;
        let val = if args.eval_every > 0 && (epoch + 1) % args.eval_every == 0 {
            Some(evaluate(&net, &data.test, &tc.loss, data.n_classes)?.accuracy)
        } else {
            None
        };
        crate::train::write_metrics_row(
            &mut metrics,
            &MetricsRow {
                epoch: epoch + 1,
                train_loss: stats.mean_loss,
                train_reg_loss: stats.mean_reg_loss,
                train_accuracy: stats.accuracy,
                val_accuracy: val,
                mean_hidden_rate_hz: stats.mean_hidden_rate_hz,
                grad_norm: stats.mean_grad_norm,
                wallclock_s: if det { 0.0 } else { t0.elapsed().as_secs_f64() },
            },
        )?;
        save_checkpoint(
            &ckpt_path,
            &Checkpoint::capture(&net, &adam, epoch + 1, &rng, tc.seed),
        )?;
        info!(
            "epoch {}/{}: loss {:.4} acc {:.4} val {} rate {:.1} Hz",
            epoch + 1,
            tc.epochs,
            stats.mean_loss,
            stats.accuracy,
            val.map_or("-".into(), |v| format!("{v:.4}")),
            stats.mean_hidden_rate_hz
        );
    }
    metrics
        .flush()
        .map_err(|e| Error::io("flushing metrics.csv", e))?;

    let final_eval = evaluate(&net, &data.test, &tc.loss, data.n_classes)?;
    let final_train = evaluate(&net, &data.train, &tc.loss, data.n_classes)?;

    let mut manifest = RunManifest::new("train");
    manifest.deterministic = det;
    manifest.seed = Some(tc.seed);
    manifest.config = config_snapshot(&cfg);
    manifest.hash_input(&args.config)?;
    if let DataConfig::Hdf5 { train, test } = &cfg.data {
        manifest.hash_input(train)?;
        manifest.hash_input(test)?;
    }
    manifest.outputs = vec!["checkpoint.bin".into(), "metrics.csv".into()];
    manifest.set_wallclock(started.elapsed().as_secs_f64());
    manifest.write(&args.out)?;

    println!(
        "train: epochs={} train_accuracy={:.4} test_accuracy={:.4} train_loss={:.4} out={}",
        tc.epochs,
        final_train.accuracy,
        final_eval.accuracy,
        final_train.mean_loss,
        args.out.display()
    );
    Ok(0)
}

// ─────────────────────────────── eval ──────────────────────────────────────

fn cmd_eval(args: EvalArgs, det: bool) -> Result<i32> {
    let started = Instant::now();
    let cfg = load_config(args.config.as_deref(), &args.data)?;
    let net = checkpoint_network(&args.checkpoint)?;
    // The checkpoint owns the grid; the config only names the data.
    let data = cfg.load_data_with(net.dt(), net.n_timesteps())?;
    check_channels(data.n_channels, net.n_inputs(), "checkpoint network")?;
    let samples = if args.train_split { &data.train } else { &data.test };
    let n_classes = net.n_outputs();
    let loss = cfg.train.train_config().loss;

    let report = evaluate(&net, samples, &loss, n_classes)?;

    if let Some(raster_path) = &args.raster {
        let sample = samples.get(args.sample).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "--sample {} out of range ({} samples)",
                args.sample,
                samples.len()
            ))
        })?;
        let (record, _) = run_forward(&net, &sample.events)?;
        let mut file = create_file(raster_path)?;
        write_raster(&record, &net, &mut file).map_err(|e| Error::io("writing raster", e))?;
        info!("wrote raster of sample {} to {}", args.sample, raster_path.display());
    }

    if let Some(out) = &args.out {
        ensure_dir(out)?;
        let mut file = create_file(&out.join("confusion.csv"))?;
        for row in report.confusion.rows() {
            let line: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            writeln!(file, "{}", line.join(",")).map_err(|e| Error::io("confusion.csv", e))?;
        }
        let mut manifest = RunManifest::new("eval");
        manifest.deterministic = det;
        manifest.config = config_snapshot(&cfg);
        manifest.hash_input(&args.checkpoint)?;
        manifest.outputs = vec!["confusion.csv".into()];
        manifest.set_wallclock(started.elapsed().as_secs_f64());
        manifest.write(out)?;
    }

    println!(
        "eval: accuracy={:.4} mean_loss={:.4} n={} mean_hidden_rate_hz={:.2}",
        report.accuracy, report.mean_loss, report.n_samples, report.mean_hidden_rate_hz
    );
    Ok(0)
}

// ──────────────────────────────── cv ───────────────────────────────────────

fn cmd_cv(args: CvArgs, det: bool) -> Result<i32> {
    let started = Instant::now();
    let cfg = load_config(Some(&args.config), &args.data)?;
    cfg.validate()?;
    let tc = cfg.train.train_config();
    let data = cfg.load_data()?;
    let template = cfg.build_network(data.n_channels, data.n_classes)?;

    let report = cross_validate(
        &template,
        &cfg.init.init_config(),
        &data.train,
        data.n_classes,
        args.folds,
        &tc,
    )?;
    for (i, fold) in report.folds.iter().enumerate() {
        info!("fold {}: accuracy {:.4} loss {:.4}", i, fold.accuracy, fold.mean_loss);
    }

    if let Some(out) = &args.out {
        ensure_dir(out)?;
        let json = serde_json::json!({
            "folds": report.folds.iter().map(|f| f.accuracy).collect::<Vec<_>>(),
            "mean_accuracy": report.mean_accuracy,
            "std_accuracy": report.std_accuracy,
        });
        std::fs::write(out.join("cv.json"), serde_json::to_string_pretty(&json).unwrap())
            .map_err(|e| Error::io("writing cv.json", e))?;
        let mut manifest = RunManifest::new("cv");
        manifest.deterministic = det;
        manifest.seed = Some(tc.seed);
        manifest.config = config_snapshot(&cfg);
        manifest.hash_input(&args.config)?;
        manifest.outputs = vec!["cv.json".into()];
        manifest.set_wallclock(started.elapsed().as_secs_f64());
        manifest.write(out)?;
    }

    println!(
        "cv: folds={} mean_accuracy={:.4} std_accuracy={:.4}",
        args.folds, report.mean_accuracy, report.std_accuracy
    );
    Ok(0)
}

// ───────────────────────────── gradcheck ───────────────────────────────────

fn cmd_gradcheck(args: GradcheckArgs, det: bool) -> Result<i32> {
    let started = Instant::now();
    let cfg = load_config(Some(&args.config), &args.data)?;
    cfg.validate()?;
    let data = cfg.load_data()?;
    let mut net = cfg.build_network(data.n_channels, data.n_classes)?;
    let sample = data.train.get(args.sample).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "--sample {} out of range ({} samples)",
            args.sample,
            data.train.len()
        ))
    })?;

    let mut loss = cfg.train.train_config().loss;
    if loss.reg_strength != 0.0 {
        warn!("gradcheck forces reg_strength = 0 (rate term is locally constant)");
        loss.reg_strength = 0.0;
    }
    let gc = GradcheckConfig {
        n_weight_coords: args.weight_coords,
        n_delay_coords: args.delay_coords,
        seed: args.seed,
        ..GradcheckConfig::default()
    };
    let report = gradcheck(&mut net, &sample.events, sample.label as usize, &loss, &gc)?;

    if let Some(out) = &args.out {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            ensure_dir(dir)?;
        }
        let mut file = create_file(out)?;
        write_gradcheck_csv(&report, &mut file)?;
        let mut manifest = RunManifest::new("gradcheck");
        manifest.deterministic = det;
        manifest.seed = Some(args.seed);
        manifest.config = config_snapshot(&cfg);
        manifest.hash_input(&args.config)?;
        manifest.outputs = vec![out.display().to_string()];
        manifest.set_wallclock(started.elapsed().as_secs_f64());
        manifest.write_named(&out.with_extension("manifest.json"))?;
    }

    let verdict = if report.passed() { "PASSED" } else { "FAILED" };
    println!(
        "gradcheck: pass={} fail={} skipped={} max_rel_err={:.3e} verdict={}",
        report.n_pass, report.n_fail, report.n_skipped, report.max_rel_err, verdict
    );
    Ok(if report.passed() { 0 } else { 1 })
}

// ─────────────────────────────── export ────────────────────────────────────

fn cmd_export(args: ExportArgs, det: bool) -> Result<i32> {
    let started = Instant::now();
    let net = checkpoint_network(&args.checkpoint)?;
    let (model, report) = quantize(&net);
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    export_exchange(&args.out, &model, args.force)?;

    let mut manifest = RunManifest::new("export");
    manifest.deterministic = det;
    manifest.hash_input(&args.checkpoint)?;
    manifest.outputs = vec![args.out.display().to_string()];
    manifest.set_wallclock(started.elapsed().as_secs_f64());
    manifest.write_named(&args.out.with_extension("manifest.json"))?;

    println!(
        "export: out={} projections={} max_weight_err={:.6} clamped_delays={}",
        args.out.display(),
        model.projections.len(),
        report.max_weight_err,
        report.n_clamped_delays
    );
    Ok(0)
}

// ─────────────────────────────── emulate ───────────────────────────────────

/// Outcome of emulating one sample, with optional float-parity columns.
struct EmuRow {
    label: u32,
    fixed_prediction: usize,
    n_events: usize,
    synaptic_events: u64,
    neuron_updates: u64,
    float_prediction: Option<usize>,
    event_match_rate: Option<f64>,
    max_voltage_dev: Option<f64>,
}

fn emulate_samples(
    model: &QuantizedModel,
    samples: &[BinnedSample],
    n_timesteps: usize,
    tau_loss: f64,
    float_net: Option<&Network>,
) -> Result<Vec<EmuRow>> {
    let fp = FixedPointConfig::default();
    samples
        .iter()
        .map(|s| {
            let (rec, trace, stats) = emulate_fixed_point(model, &s.events, n_timesteps, &fp)?;
            let fixed_out = OutputTrace {
                voltages: trace.voltages.clone(),
            };
            let fixed_prediction = argmax(&readout_scores(&fixed_out, model.dt, tau_loss));
            let mut row = EmuRow {
                label: s.label,
                fixed_prediction,
                n_events: rec.n_events(),
                synaptic_events: stats.synaptic_events,
                neuron_updates: stats.neuron_updates,
                float_prediction: None,
                event_match_rate: None,
                max_voltage_dev: None,
            };
            if let Some(net) = float_net {
                let (frec, ftrace) = run_forward(net, &s.events)?;
                let parity =
                    parity_report((&frec, &ftrace), (&rec, &trace), model.dt, tau_loss)?;
                row.float_prediction = Some(parity.reference_prediction);
                row.event_match_rate = Some(parity.event_match_rate());
                row.max_voltage_dev = Some(parity.max_voltage_dev);
            }
            Ok(row)
        })
        .collect()
}

fn write_emu_csv(path: &Path, rows: &[EmuRow]) -> Result<()> {
    let mut file = create_file(path)?;
    writeln!(
        file,
        "sample,label,fixed_prediction,float_prediction,events,synaptic_events,neuron_updates,event_match_rate,max_voltage_dev"
    )
    .map_err(|e| Error::io("emulation csv", e))?;
    for (i, r) in rows.iter().enumerate() {
        writeln!(
            file,
            "{},{},{},{},{},{},{},{},{}",
            i,
            r.label,
            r.fixed_prediction,
            r.float_prediction.map_or(String::new(), |p| p.to_string()),
            r.n_events,
            r.synaptic_events,
            r.neuron_updates,
            r.event_match_rate.map_or(String::new(), |v| format!("{v:.6}")),
            r.max_voltage_dev.map_or(String::new(), |v| format!("{v:.6}")),
        )
        .map_err(|e| Error::io("emulation csv", e))?;
    }
    Ok(())
}

fn accuracy_of<F: Fn(&EmuRow) -> usize>(rows: &[EmuRow], pred: F) -> f64 {
    let correct = rows.iter().filter(|r| pred(r) == r.label as usize).count();
    correct as f64 / rows.len() as f64
}

fn cmd_emulate(args: EmulateArgs, det: bool) -> Result<i32> {
    let started = Instant::now();
    let cfg = load_config(args.config.as_deref(), &args.data)?;
    let model = import_exchange(&args.model)?;
    let n_timesteps = args.timesteps.unwrap_or(cfg.network.n_timesteps);
    let data = cfg.load_data_with(model.dt, n_timesteps)?;
    let input_size = model.populations[model.input_pop()?].size;
    check_channels(data.n_channels, input_size, "exchange model")?;

    let float_net = args.compare.as_deref().map(checkpoint_network).transpose()?;
    let mut samples: &[BinnedSample] = &data.test;
    if let Some(limit) = args.limit {
        samples = &samples[..samples.len().min(limit)];
    }
    if samples.is_empty() {
        return Err(Error::InvalidConfig("no samples to emulate".into()));
    }
    let tau = cfg
        .train
        .train_config()
        .loss
        .tau_loss_ms(model.dt, n_timesteps);
    let rows = emulate_samples(&model, samples, n_timesteps, tau, float_net.as_ref())?;
    let accuracy = accuracy_of(&rows, |r| r.fixed_prediction);

    if let Some(out) = &args.out {
        ensure_dir(out)?;
        write_emu_csv(&out.join("emulation.csv"), &rows)?;
        let mut manifest = RunManifest::new("emulate");
        manifest.deterministic = det;
        manifest.config = config_snapshot(&cfg);
        manifest.hash_input(&args.model)?;
        if let Some(ckpt) = &args.compare {
            manifest.hash_input(ckpt)?;
        }
        manifest.outputs = vec!["emulation.csv".into()];
        manifest.set_wallclock(started.elapsed().as_secs_f64());
        manifest.write(out)?;
    }

    println!(
        "emulate: accuracy={:.4} n={} synaptic_events_per_sample={:.1}",
        accuracy,
        rows.len(),
        rows.iter().map(|r| r.synaptic_events as f64).sum::<f64>() / rows.len() as f64
    );
    if float_net.is_some() {
        let agreement = rows
            .iter()
            .filter(|r| Some(r.fixed_prediction) == r.float_prediction)
            .count() as f64
            / rows.len() as f64;
        println!(
            "parity: agreement={:.4} float_accuracy={:.4} mean_event_match={:.4} max_voltage_dev={:.4}",
            agreement,
            accuracy_of(&rows, |r| r.float_prediction.unwrap()),
            rows.iter().map(|r| r.event_match_rate.unwrap()).sum::<f64>() / rows.len() as f64,
            rows.iter().map(|r| r.max_voltage_dev.unwrap()).fold(0.0, f64::max),
        );
    }
    Ok(0)
}

// ─────────────────────────────── parity ────────────────────────────────────

fn cmd_parity(args: ParityArgs, det: bool) -> Result<i32> {
    let started = Instant::now();
    let cfg = load_config(args.config.as_deref(), &args.data)?;
    let model = import_exchange(&args.model)?;
    let net = checkpoint_network(&args.checkpoint)?;
    if (model.dt - net.dt()).abs() > 1e-12 {
        return Err(Error::InvalidConfig(format!(
            "exchange file dt {} does not match checkpoint dt {}",
            model.dt,
            net.dt()
        )));
    }
    let n_timesteps = net.n_timesteps();
    let data = cfg.load_data_with(net.dt(), n_timesteps)?;
    check_channels(data.n_channels, net.n_inputs(), "checkpoint network")?;

    let mut samples: &[BinnedSample] = &data.test;
    if let Some(limit) = args.limit {
        samples = &samples[..samples.len().min(limit)];
    }
    if samples.is_empty() {
        return Err(Error::InvalidConfig("no samples to compare".into()));
    }
    let tau = cfg
        .train
        .train_config()
        .loss
        .tau_loss_ms(net.dt(), n_timesteps);
    let rows = emulate_samples(&model, samples, n_timesteps, tau, Some(&net))?;

    let fixed_acc = accuracy_of(&rows, |r| r.fixed_prediction);
    let float_acc = accuracy_of(&rows, |r| r.float_prediction.unwrap());
    let agreement = rows
        .iter()
        .filter(|r| Some(r.fixed_prediction) == r.float_prediction)
        .count() as f64
        / rows.len() as f64;
    let mean_match =
        rows.iter().map(|r| r.event_match_rate.unwrap()).sum::<f64>() / rows.len() as f64;
    let max_dev = rows.iter().map(|r| r.max_voltage_dev.unwrap()).fold(0.0, f64::max);

    if let Some(out) = &args.out {
        ensure_dir(out)?;
        write_emu_csv(&out.join("parity.csv"), &rows)?;
        let json = serde_json::json!({
            "n_samples": rows.len(),
            "float_accuracy": float_acc,
            "fixed_accuracy": fixed_acc,
            "prediction_agreement": agreement,
            "mean_event_match_rate": mean_match,
            "max_voltage_dev": max_dev,
        });
        std::fs::write(out.join("parity.json"), serde_json::to_string_pretty(&json).unwrap())
            .map_err(|e| Error::io("writing parity.json", e))?;
        let mut manifest = RunManifest::new("parity");
        manifest.deterministic = det;
        manifest.config = config_snapshot(&cfg);
        manifest.hash_input(&args.model)?;
        manifest.hash_input(&args.checkpoint)?;
        manifest.outputs = vec!["parity.csv".into(), "parity.json".into()];
        manifest.set_wallclock(started.elapsed().as_secs_f64());
        manifest.write(out)?;
    }

    println!(
        "parity: n={} agreement={:.4} float_accuracy={:.4} fixed_accuracy={:.4} mean_event_match={:.4} max_voltage_dev={:.4}",
        rows.len(),
        agreement,
        float_acc,
        fixed_acc,
        mean_match,
        max_dev
    );
    Ok(0)
}

// ─────────────────────────────── bench ─────────────────────────────────────

fn cmd_bench(args: BenchArgs, det: bool) -> Result<i32> {
    let started = Instant::now();
    let cfg = load_config(args.config.as_deref(), &args.data)?;
    let model = import_exchange(&args.model)?;
    let n_timesteps = args.timesteps.unwrap_or(cfg.network.n_timesteps);
    let data = cfg.load_data_with(model.dt, n_timesteps)?;
    let input_size = model.populations[model.input_pop()?].size;
    check_channels(data.n_channels, input_size, "exchange model")?;
    let samples = &data.test[..data.test.len().min(args.samples)];
    if samples.is_empty() {
        return Err(Error::InvalidConfig("no samples to benchmark".into()));
    }

    let fp = FixedPointConfig::default();
    let mut synops = 0u64;
    let mut updates = 0u64;
    let t0 = Instant::now();
    for s in samples {
        let (_, _, stats) = emulate_fixed_point(&model, &s.events, n_timesteps, &fp)?;
        synops += stats.synaptic_events;
        updates += stats.neuron_updates;
    }
    let n = samples.len() as f64;
    let wall_per_sample = if det {
        0.0
    } else {
        t0.elapsed().as_secs_f64() / n
    };
    let synops_per_sample = synops as f64 / n;
    let updates_per_sample = updates as f64 / n;
    // Energy-delay-product proxy: operation count (energy stand-in) times
    // wallclock (latency stand-in). Software counters only.
    let proxy_edp = (synops_per_sample + updates_per_sample) * wall_per_sample;

    if let Some(out) = &args.out {
        ensure_dir(out)?;
        let json = serde_json::json!({
            "n_samples": samples.len(),
            "synaptic_events_per_sample": synops_per_sample,
            "neuron_updates_per_sample": updates_per_sample,
            "wallclock_s_per_sample": wall_per_sample,
            "proxy_edp": proxy_edp,
            "note": "software cost proxies, not hardware energy figures",
        });
        std::fs::write(out.join("bench.json"), serde_json::to_string_pretty(&json).unwrap())
            .map_err(|e| Error::io("writing bench.json", e))?;
        let mut manifest = RunManifest::new("bench");
        manifest.deterministic = det;
        manifest.config = config_snapshot(&cfg);
        manifest.hash_input(&args.model)?;
        manifest.outputs = vec!["bench.json".into()];
        manifest.set_wallclock(started.elapsed().as_secs_f64());
        manifest.write(out)?;
    }

    println!(
        "bench: n={} synaptic_events_per_sample={:.1} neuron_updates_per_sample={:.1} \
         wallclock_ms_per_sample={:.3} proxy_edp={:.3e} (software proxy, not hardware energy)",
        samples.len(),
        synops_per_sample,
        updates_per_sample,
        wall_per_sample * 1e3,
        proxy_edp
    );
    Ok(0)
}
