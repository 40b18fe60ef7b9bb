//! Quantization, the deployment exchange format, and a fixed-point emulator.
//!
//! Deployment targets take 8-bit weights and integer axonal delays of at most
//! [`MAX_DELAY_STEPS`] timesteps. [`quantize`] collapses a trained network to
//! that form (per-projection symmetric scale `s = max|w| / 127`, delays
//! rounded to steps); [`export_exchange`]/[`import_exchange`] move it through
//! an HDF5 file; [`emulate_fixed_point`] replays inference with integer-only
//! state arithmetic so the on-chip behaviour can be checked host-side, and
//! [`parity_report`] quantifies the float/fixed gap.
//!
//! # Exchange file layout (format version 1)
//!
//! ```text
//! /net                      @version u32, @dt f64 (ms),
//!                           @n_populations u32, @n_projections u32
//! /net/pop<i>               @name str
//!     kind      u8 scalar   0 = input, 1 = hidden, 2 = output
//!     size      u32 scalar
//!     tau_mem   f64 scalar  (ms)
//!     tau_syn   f64 scalar  (ms)
//!     v_th      f64 scalar
//!     v_reset   f64 scalar
//! /net/proj<j>
//!     source    u32 scalar  population index
//!     target    u32 scalar
//!     weights   i8  [n_source x n_target]
//!     delays    u8  [n_source x n_target]  integer steps <= 62
//!     scale     f64 scalar  float weight = weights * scale
//! ```
//!
//! # Fixed-point scheme
//!
//! Membrane and synaptic state are `Q.frac_bits` signed integers range-checked
//! against `state_bits` (defaults: 16 fractional, 24 total — so state lives in
//! `[-2^23, 2^23)`). Decay multipliers use `decay_bits` fractions whose
//! complements are exact (`alpha_q + (2^decay_bits - alpha_q) = 2^decay_bits`),
//! and every multiply-shift uses arithmetic right shifts, i.e. floors. Ring
//! slots accumulate raw `i8` weight sums per projection; the projection's
//! injection constant `round(scale * 2^frac_bits)` converts them to state
//! units at consume time. Thresholds quantize to `Q.threshold_frac_bits`
//! (default 8, a 16-bit value) and widen to state precision by a left shift.
//! Overflow anywhere is an error, never a silent wrap.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{
    build_network, Network, NetworkSpec, NeuronParams, PopulationKind, PopulationSpec,
    ProjectionSpec,
};
use crate::sim::{InputEvent, OutputTrace, SpikeEvent, SpikeRecord};

pub const EXCHANGE_VERSION: u32 = 1;
/// Hardware cap on per-synapse delays, in timesteps.
pub const MAX_DELAY_STEPS: u8 = 62;

/// One population of the deployable model.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantPopulation {
    pub name: String,
    pub size: usize,
    pub kind: PopulationKind,
    pub params: NeuronParams,
}

/// One projection: `i8` weights with a shared scale, `u8` step delays.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantProjection {
    pub source: usize,
    pub target: usize,
    pub weights: Array2<i8>,
    pub delay_steps: Array2<u8>,
    pub scale: f64,
}

/// A network collapsed to deployment precision.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    /// Grid step in milliseconds.
    pub dt: f64,
    pub populations: Vec<QuantPopulation>,
    pub projections: Vec<QuantProjection>,
}

impl QuantizedModel {
    pub fn input_pop(&self) -> Result<usize> {
        self.unique_kind(PopulationKind::Input)
    }

    pub fn output_pop(&self) -> Result<usize> {
        self.unique_kind(PopulationKind::Output)
    }

    fn unique_kind(&self, kind: PopulationKind) -> Result<usize> {
        let mut found = None;
        for (i, p) in self.populations.iter().enumerate() {
            if p.kind == kind {
                if found.is_some() {
                    return Err(Error::InvalidNetwork(format!(
                        "quantized model has more than one {kind:?} population"
                    )));
                }
                found = Some(i);
            }
        }
        found.ok_or_else(|| {
            Error::InvalidNetwork(format!("quantized model has no {kind:?} population"))
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.input_pop()?;
        self.output_pop()?;
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidNetwork(format!("dt must be finite and > 0, got {}", self.dt)));
        }
        for (j, pr) in self.projections.iter().enumerate() {
            let bad = |reason: String| Error::InvalidProjection { index: j, reason };
            if pr.source >= self.populations.len() || pr.target >= self.populations.len() {
                return Err(bad("source/target population index out of range".into()));
            }
            let want = (self.populations[pr.source].size, self.populations[pr.target].size);
            if pr.weights.dim() != want || pr.delay_steps.dim() != want {
                return Err(bad(format!(
                    "tensor shape {:?} does not match populations {:?}",
                    pr.weights.dim(),
                    want
                )));
            }
            if let Some(&d) = pr.delay_steps.iter().find(|&&d| d > MAX_DELAY_STEPS) {
                return Err(bad(format!(
                    "delay out of range: {d} steps exceeds the {MAX_DELAY_STEPS}-step cap"
                )));
            }
            if !(pr.scale.is_finite() && pr.scale > 0.0) {
                return Err(bad(format!("scale must be finite and > 0, got {}", pr.scale)));
            }
        }
        Ok(())
    }
}

/// What quantization cost, per projection and overall.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuantizationReport {
    pub scales: Vec<f64>,
    /// Largest `|w_float - w_q * s|` across all projections.
    pub max_weight_err: f64,
    /// Delays that hit the step cap and were clamped.
    pub n_clamped_delays: usize,
}

/// Collapse a float network to `i8` weights and `u8` step delays.
///
/// Per projection: symmetric scale `s = max|w|/127` (1.0 when all weights are
/// zero), `w_q = round(w/s)` (half away from zero, matching `f64::round`),
/// `d_q = round(d/dt)` clamped to [`MAX_DELAY_STEPS`].
pub fn quantize(net: &Network) -> (QuantizedModel, QuantizationReport) {
    let spec = net.spec();
    let mut scales = Vec::new();
    let mut max_err = 0.0f64;
    let mut n_clamped = 0usize;
    let mut projections = Vec::with_capacity(spec.projections.len());
    for proj in &spec.projections {
        let w_max = proj.weights.iter().fold(0.0f64, |m, &w| m.max(w.abs()));
        let scale = if w_max > 0.0 { w_max / 127.0 } else { 1.0 };
        let weights = proj.weights.mapv(|w| {
            let q = (w / scale).round().clamp(-127.0, 127.0);
            max_err = max_err.max((w - q * scale).abs());
            q as i8
        });
        let delay_steps = proj.delays.mapv(|d| {
            let steps = (d / spec.dt).round();
            if steps > MAX_DELAY_STEPS as f64 {
                n_clamped += 1;
                MAX_DELAY_STEPS
            } else {
                steps as u8
            }
        });
        scales.push(scale);
        projections.push(QuantProjection {
            source: net.pop_index(&proj.source).unwrap(),
            target: net.pop_index(&proj.target).unwrap(),
            weights,
            delay_steps,
            scale,
        });
    }
    let populations = spec
        .populations
        .iter()
        .map(|p| QuantPopulation {
            name: p.name.clone(),
            size: p.size,
            kind: p.kind,
            params: p.params,
        })
        .collect();
    (
        QuantizedModel {
            dt: spec.dt,
            populations,
            projections,
        },
        QuantizationReport {
            scales,
            max_weight_err: max_err,
            n_clamped_delays: n_clamped,
        },
    )
}

/// Expand a quantized model back to a float [`Network`] (weights
/// `w_q * scale`, delays `steps * dt`, delays frozen). This is the reference
/// the emulator is compared against: same parameters, float state.
pub fn dequantize(model: &QuantizedModel, n_timesteps: usize) -> Result<Network> {
    model.validate()?;
    let populations: Vec<PopulationSpec> = model
        .populations
        .iter()
        .map(|p| PopulationSpec {
            name: p.name.clone(),
            size: p.size,
            kind: p.kind,
            params: p.params,
        })
        .collect();
    let projections = model
        .projections
        .iter()
        .map(|pr| ProjectionSpec {
            source: populations[pr.source].name.clone(),
            target: populations[pr.target].name.clone(),
            weights: pr.weights.mapv(|q| q as f64 * pr.scale),
            delays: pr.delay_steps.mapv(|s| s as f64 * model.dt),
            delays_trainable: false,
            max_delay: MAX_DELAY_STEPS as f64 * model.dt,
        })
        .collect();
    build_network(NetworkSpec {
        dt: model.dt,
        n_timesteps,
        populations,
        projections,
    })
}

// ───────────────────────────── exchange I/O ───────────────────────────────

fn kind_to_u8(kind: PopulationKind) -> u8 {
    match kind {
        PopulationKind::Input => 0,
        PopulationKind::Hidden => 1,
        PopulationKind::Output => 2,
    }
}

fn kind_from_u8(v: u8) -> Option<PopulationKind> {
    match v {
        0 => Some(PopulationKind::Input),
        1 => Some(PopulationKind::Hidden),
        2 => Some(PopulationKind::Output),
        _ => None,
    }
}

/// Write the exchange file. Refuses to replace an existing file unless
/// `force` is set.
pub fn export_exchange(path: &Path, model: &QuantizedModel, force: bool) -> Result<()> {
    model.validate()?;
    if path.exists() && !force {
        return Err(Error::RefuseOverwrite {
            path: path.display().to_string(),
        });
    }
    let file = hdf5::File::create(path)?;
    let net = file.create_group("net")?;
    net.new_attr::<u32>().create("version")?.write_scalar(&EXCHANGE_VERSION)?;
    net.new_attr::<f64>().create("dt")?.write_scalar(&model.dt)?;
    net.new_attr::<u32>()
        .create("n_populations")?
        .write_scalar(&(model.populations.len() as u32))?;
    net.new_attr::<u32>()
        .create("n_projections")?
        .write_scalar(&(model.projections.len() as u32))?;

    for (i, p) in model.populations.iter().enumerate() {
        let g = net.create_group(&format!("pop{i}"))?;
        let name: hdf5::types::VarLenUnicode = p.name.parse().map_err(|_| {
            Error::InvalidNetwork(format!("population name {:?} is not valid unicode", p.name))
        })?;
        g.new_attr::<hdf5::types::VarLenUnicode>().create("name")?.write_scalar(&name)?;
        g.new_dataset::<u8>().create("kind")?.write_scalar(&kind_to_u8(p.kind))?;
        g.new_dataset::<u32>().create("size")?.write_scalar(&(p.size as u32))?;
        g.new_dataset::<f64>().create("tau_mem")?.write_scalar(&p.params.tau_mem)?;
        g.new_dataset::<f64>().create("tau_syn")?.write_scalar(&p.params.tau_syn)?;
        g.new_dataset::<f64>().create("v_th")?.write_scalar(&p.params.v_threshold)?;
        g.new_dataset::<f64>().create("v_reset")?.write_scalar(&p.params.v_reset)?;
    }
    for (j, pr) in model.projections.iter().enumerate() {
        let g = net.create_group(&format!("proj{j}"))?;
        g.new_dataset::<u32>().create("source")?.write_scalar(&(pr.source as u32))?;
        g.new_dataset::<u32>().create("target")?.write_scalar(&(pr.target as u32))?;
        g.new_dataset::<i8>().shape(pr.weights.dim()).create("weights")?.write(&pr.weights)?;
        g.new_dataset::<u8>()
            .shape(pr.delay_steps.dim())
            .create("delays")?
            .write(&pr.delay_steps)?;
        g.new_dataset::<f64>().create("scale")?.write_scalar(&pr.scale)?;
    }
    Ok(())
}

/// Read and validate an exchange file.
pub fn import_exchange(path: &Path) -> Result<QuantizedModel> {
    let p = path.display().to_string();
    let bad = |reason: String| Error::InvalidExchangeFile {
        path: p.clone(),
        reason,
    };
    let file = hdf5::File::open(path)?;
    let net = file.group("net").map_err(|_| bad("missing /net group".into()))?;
    let version: u32 = net
        .attr("version")
        .and_then(|a| a.read_scalar())
        .map_err(|_| bad("missing version attribute".into()))?;
    if version != EXCHANGE_VERSION {
        return Err(Error::UnsupportedVersion {
            path: p,
            found: version,
            supported: EXCHANGE_VERSION,
        });
    }
    let dt: f64 = net
        .attr("dt")
        .and_then(|a| a.read_scalar())
        .map_err(|_| bad("missing dt attribute".into()))?;
    let n_pops: u32 = net
        .attr("n_populations")
        .and_then(|a| a.read_scalar())
        .map_err(|_| bad("missing n_populations attribute".into()))?;
    let n_projs: u32 = net
        .attr("n_projections")
        .and_then(|a| a.read_scalar())
        .map_err(|_| bad("missing n_projections attribute".into()))?;

    let mut populations = Vec::with_capacity(n_pops as usize);
    for i in 0..n_pops {
        let g = net
            .group(&format!("pop{i}"))
            .map_err(|_| bad(format!("missing group pop{i}")))?;
        let kind_raw: u8 = g.dataset("kind")?.read_scalar()?;
        let kind = kind_from_u8(kind_raw)
            .ok_or_else(|| bad(format!("pop{i}: unknown kind code {kind_raw}")))?;
        let size: u32 = g.dataset("size")?.read_scalar()?;
        let name = g
            .attr("name")
            .and_then(|a| a.read_scalar::<hdf5::types::VarLenUnicode>())
            .map(|s| s.to_string())
            .unwrap_or_else(|_| format!("pop{i}"));
        populations.push(QuantPopulation {
            name,
            size: size as usize,
            kind,
            params: NeuronParams {
                tau_mem: g.dataset("tau_mem")?.read_scalar()?,
                tau_syn: g.dataset("tau_syn")?.read_scalar()?,
                v_threshold: g.dataset("v_th")?.read_scalar()?,
                v_reset: g.dataset("v_reset")?.read_scalar()?,
            },
        });
    }
    let mut projections = Vec::with_capacity(n_projs as usize);
    for j in 0..n_projs {
        let g = net
            .group(&format!("proj{j}"))
            .map_err(|_| bad(format!("missing group proj{j}")))?;
        let source: u32 = g.dataset("source")?.read_scalar()?;
        let target: u32 = g.dataset("target")?.read_scalar()?;
        projections.push(QuantProjection {
            source: source as usize,
            target: target as usize,
            weights: g.dataset("weights")?.read_2d::<i8>()?,
            delay_steps: g.dataset("delays")?.read_2d::<u8>()?,
            scale: g.dataset("scale")?.read_scalar()?,
        });
    }
    let model = QuantizedModel {
        dt,
        populations,
        projections,
    };
    // Map structural errors to exchange-file errors so CLI exit codes and
    // messages point at the file, not at an internal model.
    model.validate().map_err(|e| bad(e.to_string()))?;
    Ok(model)
}

// ─────────────────────────── fixed-point emulator ──────────────────────────

/// Bit widths of the integer inference path.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FixedPointConfig {
    /// Total state width in bits including sign; state must stay inside
    /// `[-2^(state_bits-1), 2^(state_bits-1))`.
    pub state_bits: u32,
    /// Fraction bits of the decay multipliers.
    pub decay_bits: u32,
    /// Fraction bits of membrane/current state.
    pub frac_bits: u32,
    /// Fraction bits of the stored (16-bit) threshold and reset values.
    pub threshold_frac_bits: u32,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        FixedPointConfig {
            state_bits: 24,
            decay_bits: 12,
            frac_bits: 16,
            threshold_frac_bits: 8,
        }
    }
}

impl FixedPointConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=31).contains(&self.state_bits)
            || !(1..=20).contains(&self.decay_bits)
            || !(1..=30).contains(&self.frac_bits)
            || self.threshold_frac_bits > self.frac_bits
            || self.frac_bits >= self.state_bits
        {
            return Err(Error::InvalidConfig(format!(
                "fixed-point widths out of range: {self:?} \
                 (need threshold_frac_bits <= frac_bits < state_bits <= 31)"
            )));
        }
        Ok(())
    }
}

/// Output-state trajectory of the emulator: raw `Q.frac_bits` integers plus
/// their float interpretation.
#[derive(Debug, Clone)]
pub struct FixedPointTrace {
    pub q: Array2<i32>,
    pub voltages: Array2<f64>,
}

/// Work and range counters of an emulation run.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct EmuStats {
    pub synaptic_events: u64,
    pub neuron_updates: u64,
    /// Largest `|state|` reached, handy for judging headroom.
    pub max_abs_state: i32,
}

/// Replay inference with integer-only state arithmetic.
///
/// The state path touches nothing but `i32`/`i64` integers: decay by
/// multiply-and-arithmetic-shift, synaptic input by raw `i8` ring sums times a
/// per-projection integer injection constant. Any value leaving the
/// `state_bits` range aborts with [`Error::FixedPointOverflow`].
pub fn emulate_fixed_point(
    model: &QuantizedModel,
    input: &[InputEvent],
    n_timesteps: usize,
    cfg: &FixedPointConfig,
) -> Result<(SpikeRecord, FixedPointTrace, EmuStats)> {
    model.validate()?;
    cfg.validate()?;
    let input_pop = model.input_pop()?;
    let output_pop = model.output_pop()?;
    let n_pops = model.populations.len();
    let frac = cfg.frac_bits;
    let db = cfg.decay_bits;
    let one = 1i64 << db;
    let state_limit: i64 = 1 << (cfg.state_bits - 1);

    // Per-population decay constants and threshold/reset in state units.
    let mut alpha_q = vec![0i64; n_pops];
    let mut beta_q = vec![0i64; n_pops];
    let mut thr_state = vec![0i64; n_pops];
    let mut reset_state = vec![0i64; n_pops];
    for (i, p) in model.populations.iter().enumerate() {
        if p.kind == PopulationKind::Input {
            continue;
        }
        let alpha = (-model.dt / p.params.tau_mem).exp();
        let beta = (-model.dt / p.params.tau_syn).exp();
        alpha_q[i] = ((alpha * one as f64).round() as i64).clamp(0, one);
        beta_q[i] = ((beta * one as f64).round() as i64).clamp(0, one);
        let tq_limit = 1i64 << 15; // thresholds are 16-bit values
        let widen = frac - cfg.threshold_frac_bits;
        let tq = (p.params.v_threshold * (1i64 << cfg.threshold_frac_bits) as f64).round() as i64;
        let rq = (p.params.v_reset * (1i64 << cfg.threshold_frac_bits) as f64).round() as i64;
        if tq.abs() >= tq_limit || rq.abs() >= tq_limit {
            return Err(Error::InvalidConfig(format!(
                "population {}: threshold/reset do not fit a 16-bit Q{}.{} value",
                p.name,
                15 - cfg.threshold_frac_bits,
                cfg.threshold_frac_bits
            )));
        }
        thr_state[i] = tq << widen;
        reset_state[i] = rq << widen;
    }

    // Injection constants; reject scales the integer path cannot express.
    let mut inj_q = Vec::with_capacity(model.projections.len());
    for (j, pr) in model.projections.iter().enumerate() {
        let inj = (pr.scale * (1i64 << frac) as f64).round();
        if !(inj.is_finite() && inj.abs() < i64::MAX as f64 / (128.0 * 1024.0)) {
            return Err(Error::InvalidProjection {
                index: j,
                reason: format!("scale {} overflows the injection constant", pr.scale),
            });
        }
        inj_q.push(inj as i64);
    }

    // Validate the input stream exactly like the float forward.
    let n_inputs = model.populations[input_pop].size;
    let mut last_step = 0u32;
    for (k, ev) in input.iter().enumerate() {
        if ev.channel as usize >= n_inputs {
            return Err(Error::ChannelOutOfRange {
                sample: 0,
                channel: ev.channel,
                n_channels: n_inputs as u32,
            });
        }
        if (ev.step as usize) >= n_timesteps {
            return Err(Error::InvalidConfig(format!(
                "input event {k} at step {} is outside the horizon {n_timesteps}",
                ev.step
            )));
        }
        if ev.step < last_step {
            return Err(Error::InvalidConfig("input events must be sorted by step".into()));
        }
        last_step = ev.step;
    }

    // Incoming projection indices per population.
    let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); n_pops];
    for (q, pr) in model.projections.iter().enumerate() {
        incoming[pr.target].push(q);
    }

    // Raw-sum delay rings, one per projection.
    struct Ring {
        slots: Vec<i32>,
        n: usize,
        cap: usize,
    }
    let mut rings: Vec<Ring> = model
        .projections
        .iter()
        .map(|pr| {
            let cap = MAX_DELAY_STEPS as usize + 2;
            let n = model.populations[pr.target].size;
            Ring {
                slots: vec![0; cap * n],
                n,
                cap,
            }
        })
        .collect();

    let mut v: Vec<Vec<i64>> = model.populations.iter().map(|p| vec![0; p.size]).collect();
    let mut i_syn: Vec<Vec<i64>> = model.populations.iter().map(|p| vec![0; p.size]).collect();
    let mut record = SpikeRecord::from_sizes(model.populations.iter().map(|p| p.size));
    let mut trace_q = Array2::zeros((n_timesteps, model.populations[output_pop].size));
    let mut stats = EmuStats::default();
    let mut cursor = 0usize;
    // (pop, neuron) spikes of the current step, built in index order.
    let mut fired: Vec<(usize, usize)> = Vec::new();

    for t in 0..n_timesteps {
        for (k, &vq) in v[output_pop].iter().enumerate() {
            trace_q[[t, k]] = vq as i32;
        }
        fired.clear();

        // Input events of this step are both recorded and queued for delivery.
        while cursor < input.len() && input[cursor].step as usize == t {
            fired.push((input_pop, input[cursor].channel as usize));
            cursor += 1;
        }

        for p in 0..n_pops {
            if p == input_pop {
                continue;
            }
            let size = model.populations[p].size;
            let is_hidden = model.populations[p].kind == PopulationKind::Hidden;
            for n in 0..size {
                let v_old = v[p][n];
                let i_old = i_syn[p][n];
                // Membrane sees the previous current; exact complement keeps
                // alpha_q + (one - alpha_q) == one.
                let v_new = (alpha_q[p] * v_old + (one - alpha_q[p]) * i_old) >> db;

                let mut arrivals: i64 = 0;
                for &q in &incoming[p] {
                    let ring = &mut rings[q];
                    let idx = (t % ring.cap) * ring.n + n;
                    let raw = ring.slots[idx] as i64;
                    ring.slots[idx] = 0;
                    arrivals += raw * inj_q[q];
                }
                let i_new = ((beta_q[p] * i_old) >> db) + arrivals;

                for (what, val) in [("membrane", v_new), ("current", i_new)] {
                    if val.abs() >= state_limit {
                        return Err(Error::FixedPointOverflow {
                            what: what.into(),
                            step: t,
                            neuron: n,
                            population: model.populations[p].name.clone(),
                            bits: cfg.state_bits - 1,
                        });
                    }
                    stats.max_abs_state = stats.max_abs_state.max(val.unsigned_abs() as i32);
                }

                i_syn[p][n] = i_new;
                if is_hidden && v_new >= thr_state[p] {
                    v[p][n] = reset_state[p];
                    fired.push((p, n));
                } else {
                    v[p][n] = v_new;
                }
                stats.neuron_updates += 1;
            }
        }

        // Record this step's emissions in (pop, neuron) order, then deliver.
        fired.sort_unstable();
        for &(p, n) in &fired {
            record.push(SpikeEvent {
                step: t as u32,
                pop: p as u32,
                neuron: n as u32,
                crossing: 0.0,
                slope: 0.0,
            });
        }
        for &(p, n) in &fired {
            for (q, pr) in model.projections.iter().enumerate() {
                if pr.source != p {
                    continue;
                }
                let ring = &mut rings[q];
                for k in 0..ring.n {
                    let slot = t + 1 + pr.delay_steps[[n, k]] as usize;
                    ring.slots[(slot % ring.cap) * ring.n + k] += pr.weights[[n, k]] as i32;
                }
                stats.synaptic_events += ring.n as u64;
            }
        }
    }

    let voltages = trace_q.mapv(|q: i32| q as f64 / (1i64 << frac) as f64);
    Ok((
        record,
        FixedPointTrace {
            q: trace_q,
            voltages,
        },
        stats,
    ))
}

// ─────────────────────────────── parity ────────────────────────────────────

/// Float-vs-fixed comparison on one sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParityReport {
    pub n_reference_events: usize,
    pub n_fixed_events: usize,
    /// Multiset intersection on `(step, pop, neuron)`.
    pub n_matched_events: usize,
    pub max_voltage_dev: f64,
    pub mean_voltage_dev: f64,
    pub reference_prediction: usize,
    pub fixed_prediction: usize,
    pub predictions_agree: bool,
}

impl ParityReport {
    /// Fraction of reference events reproduced exactly.
    pub fn event_match_rate(&self) -> f64 {
        if self.n_reference_events == 0 {
            1.0
        } else {
            self.n_matched_events as f64 / self.n_reference_events as f64
        }
    }
}

/// Compare a float reference run against a fixed-point run of the same model
/// and input. `tau_loss` feeds the readout used for the prediction columns.
pub fn parity_report(
    reference: (&SpikeRecord, &OutputTrace),
    fixed: (&SpikeRecord, &FixedPointTrace),
    dt: f64,
    tau_loss: f64,
) -> Result<ParityReport> {
    let (ref_rec, ref_trace) = reference;
    let (fix_rec, fix_trace) = fixed;
    if ref_trace.voltages.dim() != fix_trace.voltages.dim() {
        return Err(Error::ShapeMismatch {
            context: "parity traces".into(),
            expected: format!("{:?}", ref_trace.voltages.dim()),
            got: format!("{:?}", fix_trace.voltages.dim()),
        });
    }

    let mut counts: BTreeMap<(u32, u32, u32), i64> = BTreeMap::new();
    for e in &ref_rec.events {
        *counts.entry((e.step, e.pop, e.neuron)).or_default() += 1;
    }
    let mut matched = 0usize;
    for e in &fix_rec.events {
        let c = counts.entry((e.step, e.pop, e.neuron)).or_default();
        if *c > 0 {
            *c -= 1;
            matched += 1;
        }
    }

    let mut max_dev = 0.0f64;
    let mut sum_dev = 0.0f64;
    for (a, b) in ref_trace.voltages.iter().zip(fix_trace.voltages.iter()) {
        let d = (a - b).abs();
        max_dev = max_dev.max(d);
        sum_dev += d;
    }
    let mean_dev = sum_dev / ref_trace.voltages.len() as f64;

    let argmax = |scores: &[f64]| {
        scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(k, _)| k)
            .unwrap()
    };
    let ref_scores = crate::sim::readout_scores(ref_trace, dt, tau_loss);
    let fix_out = OutputTrace {
        voltages: fix_trace.voltages.clone(),
    };
    let fix_scores = crate::sim::readout_scores(&fix_out, dt, tau_loss);
    let rp = argmax(&ref_scores);
    let fp = argmax(&fix_scores);

    Ok(ParityReport {
        n_reference_events: ref_rec.n_events(),
        n_fixed_events: fix_rec.n_events(),
        n_matched_events: matched,
        max_voltage_dev: max_dev,
        mean_voltage_dev: mean_dev,
        reference_prediction: rp,
        fixed_prediction: fp,
        predictions_agree: rp == fp,
    })
}
