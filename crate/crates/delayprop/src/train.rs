//! Training: Adam over weights and real-valued delays, batched epochs with a
//! deterministic parallel reduction, evaluation, stratified k-fold
//! cross-validation, and resumable checkpoints.
//!
//! Delays are plain parameters here — updated by Adam like weights, then
//! clamped back into `[0, max_delay]` — and only collapse to integer steps at
//! export time.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use crate::data::BinnedSample;
use crate::error::{Error, Result};
use crate::eventprop::{backward, loss_and_seed, mean_hidden_rate_hz, Gradients, LossConfig};
use crate::model::{build_network, InitConfig, Network, NetworkSpec};
use crate::sim::run_forward;

/// Optimizer and loop configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_weights: f64,
    /// Delays usually want a larger step than weights; they live on a
    /// milliseconds scale.
    pub lr_delays: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Global-norm gradient clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub loss: LossConfig,
    /// Seed for epoch shuffling.
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            lr_weights: 1e-2,
            lr_delays: 3e-2,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: Some(10.0),
            loss: LossConfig::default(),
            seed: 1,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be >= 1".into()));
        }
        if !(self.lr_weights >= 0.0 && self.lr_delays >= 0.0) {
            return Err(Error::InvalidConfig("learning rates must be >= 0".into()));
        }
        if !(self.adam_beta1 >= 0.0 && self.adam_beta1 < 1.0)
            || !(self.adam_beta2 >= 0.0 && self.adam_beta2 < 1.0)
            || !(self.adam_eps > 0.0)
        {
            return Err(Error::InvalidConfig("Adam moments/eps out of range".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::InvalidConfig("grad_clip must be > 0 when set".into()));
            }
        }
        Ok(())
    }
}

/// Adam state over every weight and delay tensor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_d: Vec<Array2<f64>>,
    v_d: Vec<Array2<f64>>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr_weights: f64,
    lr_delays: f64,
}

impl Adam {
    pub fn new(net: &Network, cfg: &TrainConfig) -> Self {
        let zw: Vec<Array2<f64>> = net
            .spec()
            .projections
            .iter()
            .map(|p| Array2::zeros(p.weights.dim()))
            .collect();
        Adam {
            m_w: zw.clone(),
            v_w: zw.clone(),
            m_d: zw.clone(),
            v_d: zw,
            t: 0,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            lr_weights: cfg.lr_weights,
            lr_delays: cfg.lr_delays,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update. Delays move only where trainable and are
    /// clamped back into `[0, max_delay]` afterwards.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let spec = net.spec_mut();
        for q in 0..spec.projections.len() {
            let trainable = spec.projections[q].delays_trainable;
            let max_delay = spec.projections[q].max_delay;

            let lr = self.lr_weights;
            ndarray::Zip::from(&mut spec.projections[q].weights)
                .and(&mut self.m_w[q])
                .and(&mut self.v_w[q])
                .and(&grads.dw[q])
                .for_each(|x, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *x -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });

            if trainable {
                let lr = self.lr_delays;
                ndarray::Zip::from(&mut spec.projections[q].delays)
                    .and(&mut self.m_d[q])
                    .and(&mut self.v_d[q])
                    .and(&grads.dd[q])
                    .for_each(|x, m, v, &g| {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        *x = (*x - lr * (*m / bc1) / ((*v / bc2).sqrt() + eps))
                            .clamp(0.0, max_delay);
                    });
            }
        }
    }
}

/// Scale gradients down to `max_norm` if they exceed it; returns the pre-clip
/// norm.
pub fn clip_gradients(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.norm();
    if norm > max_norm && norm > 0.0 {
        let loss = grads.loss;
        let reg = grads.reg_loss;
        grads.scale(max_norm / norm);
        grads.loss = loss;
        grads.reg_loss = reg;
    }
    norm
}

/// Per-sample result of the forward/backward pipeline.
struct SampleOutcome {
    grads: Gradients,
    correct: bool,
    rate_hz: f64,
}

fn sample_gradients(net: &Network, sample: &BinnedSample, loss: &LossConfig) -> Result<SampleOutcome> {
    let (record, trace) = run_forward(net, &sample.events)?;
    let seeds = loss_and_seed(&trace, sample.label as usize, net.dt(), loss)?;
    let correct = seeds.predicted == sample.label as usize;
    let rate_hz = mean_hidden_rate_hz(&record, net);
    let grads = backward(net, &record, &seeds, loss)?;
    Ok(SampleOutcome { grads, correct, rate_hz })
}

/// Aggregates of one pass over the training set.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub mean_reg_loss: f64,
    pub accuracy: f64,
    pub mean_hidden_rate_hz: f64,
    /// Mean pre-clip gradient norm across batches.
    pub mean_grad_norm: f64,
    pub n_batches: usize,
}

/// One shuffled pass: per batch, samples run forward/backward in parallel,
/// gradients reduce in index order (so results are identical at any thread
/// count), then one Adam step.
pub fn train_epoch(
    net: &mut Network,
    adam: &mut Adam,
    samples: &[BinnedSample],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<EpochStats> {
    if samples.is_empty() {
        return Err(Error::InvalidConfig("cannot train on an empty sample set".into()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    if cfg.shuffle {
        order.shuffle(rng);
    }

    let mut sum_loss = 0.0;
    let mut sum_reg = 0.0;
    let mut sum_rate = 0.0;
    let mut sum_norm = 0.0;
    let mut n_correct = 0usize;
    let mut n_batches = 0usize;

    for batch in order.chunks(cfg.batch_size) {
        // Parallel map, ordered collect: the reduction order below is fixed
        // by `batch`, not by thread scheduling.
        let outcomes: Vec<SampleOutcome> = batch
            .par_iter()
            .map(|&i| sample_gradients(net, &samples[i], &cfg.loss))
            .collect::<Result<Vec<_>>>()?;

        let mut total = Gradients::zeros(net);
        for o in &outcomes {
            total.accumulate(&o.grads);
            sum_rate += o.rate_hz;
            n_correct += o.correct as usize;
        }
        total.scale(1.0 / batch.len() as f64);
        sum_loss += total.loss;
        sum_reg += total.reg_loss;
        let norm = match cfg.grad_clip {
            Some(c) => clip_gradients(&mut total, c),
            None => total.norm(),
        };
        sum_norm += norm;
        adam.step(net, &total);
        n_batches += 1;
    }

    Ok(EpochStats {
        mean_loss: sum_loss / n_batches as f64,
        mean_reg_loss: sum_reg / n_batches as f64,
        accuracy: n_correct as f64 / samples.len() as f64,
        mean_hidden_rate_hz: sum_rate / samples.len() as f64,
        mean_grad_norm: sum_norm / n_batches as f64,
        n_batches,
    })
}

/// Held-out metrics: accuracy, mean loss, a `[true x predicted]` confusion
/// matrix, and the mean hidden firing rate.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub accuracy: f64,
    pub mean_loss: f64,
    pub confusion: Array2<u64>,
    pub mean_hidden_rate_hz: f64,
    pub n_samples: usize,
}

pub fn evaluate(
    net: &Network,
    samples: &[BinnedSample],
    loss: &LossConfig,
    n_classes: usize,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::InvalidConfig("cannot evaluate an empty sample set".into()));
    }
    let rows: Vec<(usize, f64, f64)> = samples
        .par_iter()
        .map(|s| {
            let (record, trace) = run_forward(net, &s.events)?;
            let seeds = loss_and_seed(&trace, s.label as usize, net.dt(), loss)?;
            Ok((seeds.predicted, seeds.loss, mean_hidden_rate_hz(&record, net)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut confusion = Array2::zeros((n_classes, n_classes));
    let mut correct = 0usize;
    let mut sum_loss = 0.0;
    let mut sum_rate = 0.0;
    for (s, &(pred, loss, rate)) in samples.iter().zip(&rows) {
        let label = s.label as usize;
        if label >= n_classes || pred >= n_classes {
            return Err(Error::InvalidConfig(format!(
                "label/prediction {label}/{pred} outside {n_classes} classes"
            )));
        }
        confusion[[label, pred]] += 1;
        correct += (pred == label) as usize;
        sum_loss += loss;
        sum_rate += rate;
    }
    Ok(EvalReport {
        accuracy: correct as f64 / samples.len() as f64,
        mean_loss: sum_loss / samples.len() as f64,
        confusion,
        mean_hidden_rate_hz: sum_rate / samples.len() as f64,
        n_samples: samples.len(),
    })
}

/// Stratified fold assignment: per class, samples go round-robin into `k`
/// folds, so every fold sees every class at near-identical proportions.
pub fn stratified_folds(labels: &[u32], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidConfig("cross-validation needs k >= 2".into()));
    }
    if labels.len() < k {
        return Err(Error::InvalidConfig(format!(
            "cannot split {} samples into {k} folds",
            labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut folds = vec![Vec::new(); k];
    let mut next = 0usize;
    for (_, mut idxs) in by_class {
        idxs.shuffle(&mut rng);
        for i in idxs {
            folds[next % k].push(i);
            next += 1;
        }
    }
    if folds.iter().any(|f| f.is_empty()) {
        return Err(Error::InvalidConfig(format!(
            "a fold came out empty splitting {} samples into {k}",
            labels.len()
        )));
    }
    Ok(folds)
}

/// Per-fold results plus the summary statistics.
#[derive(Debug, Clone)]
pub struct CvReport {
    pub folds: Vec<EvalReport>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

/// K-fold cross-validation: each fold reinitializes the template network with
/// a distinct seed, trains on the other folds, and evaluates held out.
pub fn cross_validate(
    template: &Network,
    init: &InitConfig,
    samples: &[BinnedSample],
    n_classes: usize,
    k: usize,
    cfg: &TrainConfig,
) -> Result<CvReport> {
    cfg.validate()?;
    let labels: Vec<u32> = samples.iter().map(|s| s.label).collect();
    let folds = stratified_folds(&labels, k, cfg.seed)?;

    let mut reports = Vec::with_capacity(k);
    for (f, held_out) in folds.iter().enumerate() {
        let mut net = template.clone();
        crate::model::init_parameters(
            &mut net,
            &InitConfig {
                seed: init.seed.wrapping_add(f as u64),
                ..init.clone()
            },
        )?;
        let train_set: Vec<BinnedSample> = folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, idxs)| idxs.iter().map(|&i| samples[i].clone()))
            .collect();
        let test_set: Vec<BinnedSample> = held_out.iter().map(|&i| samples[i].clone()).collect();

        let mut adam = Adam::new(&net, cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(f as u64));
        for _ in 0..cfg.epochs {
            train_epoch(&mut net, &mut adam, &train_set, cfg, &mut rng)?;
        }
        reports.push(evaluate(&net, &test_set, &cfg.loss, n_classes)?);
    }

    let accs: Vec<f64> = reports.iter().map(|r| r.accuracy).collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / accs.len() as f64;
    Ok(CvReport {
        folds: reports,
        mean_accuracy: mean,
        std_accuracy: var.sqrt(),
    })
}

// ───────────────────────────── checkpoints ────────────────────────────────

const CHECKPOINT_MAGIC: &[u8; 8] = b"DLYPROPC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume training mid-run bit-for-bit: parameters,
/// optimizer moments, epoch counter, and the shuffle RNG position.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub adam: Adam,
    /// Epochs already completed.
    pub epoch: usize,
    /// `ChaCha8Rng` stream position of the shuffle RNG.
    pub rng_word_pos: u128,
    pub train_seed: u64,
}

impl Checkpoint {
    pub fn capture(net: &Network, adam: &Adam, epoch: usize, rng: &ChaCha8Rng, seed: u64) -> Self {
        Checkpoint {
            spec: net.spec().clone(),
            adam: adam.clone(),
            epoch,
            rng_word_pos: rng.get_word_pos(),
            train_seed: seed,
        }
    }

    /// Rebuild the network (revalidating the spec) and the shuffle RNG.
    pub fn restore(&self) -> Result<(Network, Adam, ChaCha8Rng)> {
        let net = build_network(self.spec.clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.train_seed);
        rng.set_word_pos(self.rng_word_pos);
        Ok((net, self.adam.clone(), rng))
    }
}

/// Write magic + version + bincode payload via a temp file and an atomic
/// rename, so a crash cannot leave a torn checkpoint behind.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let ctx = || format!("writing checkpoint {}", path.display());
    let payload = bincode::serialize(ckpt).map_err(|e| Error::InvalidCheckpoint {
        path: path.display().to_string(),
        reason: format!("serialize: {e}"),
    })?;
    let tmp = path.with_extension("ckpt.tmp");
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(ctx(), e))?;
        f.write_all(CHECKPOINT_MAGIC).map_err(|e| Error::io(ctx(), e))?;
        f.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(|e| Error::io(ctx(), e))?;
        f.write_all(&payload).map_err(|e| Error::io(ctx(), e))?;
        f.sync_all().map_err(|e| Error::io(ctx(), e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(ctx(), e))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let p = path.display().to_string();
    let bad = |reason: String| Error::InvalidCheckpoint {
        path: p.clone(),
        reason,
    };
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(format!("opening checkpoint {p}"), e))?;
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic).map_err(|_| bad("file too short for header".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic (not a checkpoint file)".into()));
    }
    let mut ver = [0u8; 4];
    f.read_exact(&mut ver).map_err(|_| bad("file too short for version".into()))?;
    let version = u32::from_le_bytes(ver);
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "format version {version}, this build reads {CHECKPOINT_VERSION}"
        )));
    }
    let mut payload = Vec::new();
    f.read_to_end(&mut payload).map_err(|e| Error::io(format!("reading checkpoint {p}"), e))?;
    bincode::deserialize(&payload).map_err(|e| bad(format!("payload: {e}")))
}

// ───────────────────────────── metrics CSV ────────────────────────────────

/// One line of the per-epoch training log.
#[derive(Debug, Clone, Copy)]
pub struct MetricsRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_reg_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    pub mean_hidden_rate_hz: f64,
    pub grad_norm: f64,
    /// Seconds; callers zero this under deterministic runs so logs diff clean.
    pub wallclock_s: f64,
}

pub fn write_metrics_header<W: Write>(w: &mut W) -> Result<()> {
    writeln!(
        w,
        "epoch,train_loss,train_reg_loss,train_accuracy,val_accuracy,mean_hidden_rate_hz,grad_norm,wallclock_s"
    )
    .map_err(|e| Error::io("metrics csv", e))
}

pub fn write_metrics_row<W: Write>(w: &mut W, row: &MetricsRow) -> Result<()> {
    let val = row.val_accuracy.map_or(String::new(), |v| format!("{v:.6}"));
    writeln!(
        w,
        "{},{:.6},{:.6},{:.6},{},{:.3},{:.6},{:.3}",
        row.epoch,
        row.train_loss,
        row.train_reg_loss,
        row.train_accuracy,
        val,
        row.mean_hidden_rate_hz,
        row.grad_norm,
        row.wallclock_s
    )
    .map_err(|e| Error::io("metrics csv", e))
}
