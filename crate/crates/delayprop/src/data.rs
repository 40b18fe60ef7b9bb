//! Spiking datasets: event-file I/O, grid binning, and a synthetic
//! timing-code benchmark.
//!
//! The on-disk layout follows the common audio-spike corpus convention:
//! ragged `spikes/times` (seconds) and `spikes/units` (channel ids) plus a
//! flat `labels` array, one entry per sample. Binning maps event times onto
//! the simulation grid as `step = floor(t * 1000 / dt)` and drops events past
//! the horizon.
//!
//! [`synthetic_delay_task`] builds a task that is solvable *only* from
//! relative spike timing: every class emits exactly one spike per channel
//! (identical rates everywhere), channels fire in fixed equal-size groups
//! whose membership is shared by all classes (so "which channels co-fire"
//! carries nothing), classes differ only in the circular gap pattern between
//! group firing times, and a per-sample random circular shift makes every
//! channel's absolute spike time uniformly distributed regardless of class.

use hdf5::types::VarLenArray;
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::path::Path;

use crate::error::{Error, Result};
use crate::sim::InputEvent;

/// Event-format dataset: per-sample ragged spike times (seconds) and channel
/// ids, plus one label per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikingDataset {
    pub times_s: Vec<Vec<f64>>,
    pub units: Vec<Vec<u32>>,
    pub labels: Vec<u32>,
    pub n_channels: usize,
    pub n_classes: usize,
}

impl SpikingDataset {
    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    /// Samples per class, indexed by label.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.n_classes];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }
}

/// One sample mapped onto the simulation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedSample {
    pub events: Vec<InputEvent>,
    pub label: u32,
}

/// Read an event-format dataset.
///
/// `n_channels`/`n_classes` come from the `n_channels`/`n_classes` root
/// attributes when present (our own writer sets them) and are inferred from
/// the data otherwise, so community files load unchanged.
pub fn load_hdf5_dataset(path: &Path) -> Result<SpikingDataset> {
    let p = path.display().to_string();
    let invalid = |reason: String| Error::InvalidDataset {
        path: p.clone(),
        reason,
    };
    let file = hdf5::File::open(path)?;
    let times_raw = file.dataset("spikes/times")?.read_1d::<VarLenArray<f64>>()?;
    let units_raw = file.dataset("spikes/units")?.read_1d::<VarLenArray<u32>>()?;
    let labels = file.dataset("labels")?.read_1d::<u32>()?.to_vec();

    if times_raw.len() != units_raw.len() || times_raw.len() != labels.len() {
        return Err(invalid(format!(
            "inconsistent sample counts: {} times, {} units, {} labels",
            times_raw.len(),
            units_raw.len(),
            labels.len()
        )));
    }
    let mut times_s = Vec::with_capacity(times_raw.len());
    let mut units = Vec::with_capacity(units_raw.len());
    for (i, (t, u)) in times_raw.iter().zip(units_raw.iter()).enumerate() {
        if t.len() != u.len() {
            return Err(invalid(format!(
                "sample {i}: {} times but {} units",
                t.len(),
                u.len()
            )));
        }
        if t.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(invalid(format!("sample {i}: non-finite or negative spike time")));
        }
        times_s.push(t.to_vec());
        units.push(u.to_vec());
    }

    let attr_usize = |name: &str| -> Option<usize> {
        file.attr(name).and_then(|a| a.read_scalar::<u32>()).ok().map(|v| v as usize)
    };
    let max_unit = units.iter().flatten().max().copied();
    let n_channels = match attr_usize("n_channels") {
        Some(n) => n,
        None => max_unit.map_or(0, |m| m as usize + 1),
    };
    if let Some(m) = max_unit {
        if m as usize >= n_channels {
            return Err(invalid(format!(
                "unit id {m} exceeds declared channel count {n_channels}"
            )));
        }
    }
    let n_classes = match attr_usize("n_classes") {
        Some(n) => n,
        None => labels.iter().max().map_or(0, |&m| m as usize + 1),
    };
    if let Some(&m) = labels.iter().max() {
        if m as usize >= n_classes {
            return Err(invalid(format!(
                "label {m} exceeds declared class count {n_classes}"
            )));
        }
    }
    Ok(SpikingDataset {
        times_s,
        units,
        labels,
        n_channels,
        n_classes,
    })
}

/// Write a dataset in the same ragged layout [`load_hdf5_dataset`] reads.
pub fn save_hdf5_dataset(path: &Path, ds: &SpikingDataset) -> Result<()> {
    let n = ds.n_samples();
    if ds.times_s.len() != n || ds.units.len() != n {
        return Err(Error::InvalidDataset {
            path: path.display().to_string(),
            reason: "times/units/labels lengths disagree".into(),
        });
    }
    let file = hdf5::File::create(path)?;
    let g = file.create_group("spikes")?;
    let times: Vec<VarLenArray<f64>> =
        ds.times_s.iter().map(|t| VarLenArray::from_slice(t)).collect();
    let units: Vec<VarLenArray<u32>> =
        ds.units.iter().map(|u| VarLenArray::from_slice(u)).collect();
    g.new_dataset::<VarLenArray<f64>>().shape(n).create("times")?.write(&times)?;
    g.new_dataset::<VarLenArray<u32>>().shape(n).create("units")?.write(&units)?;
    file.new_dataset::<u32>().shape(n).create("labels")?.write(&ds.labels)?;
    file.new_attr::<u32>().create("n_channels")?.write_scalar(&(ds.n_channels as u32))?;
    file.new_attr::<u32>().create("n_classes")?.write_scalar(&(ds.n_classes as u32))?;
    Ok(())
}

/// Map one sample's events onto the grid: `step = floor(t_s * 1000 / dt)`,
/// events at or past the horizon are dropped, duplicates are kept (they add
/// synaptic weight twice), output sorted by `(step, channel)`.
pub fn bin_sample(
    times_s: &[f64],
    units: &[u32],
    sample: usize,
    dt: f64,
    n_timesteps: usize,
    n_channels: usize,
) -> Result<Vec<InputEvent>> {
    let mut events = Vec::with_capacity(times_s.len());
    for (&t, &ch) in times_s.iter().zip(units) {
        if ch as usize >= n_channels {
            return Err(Error::ChannelOutOfRange {
                sample,
                channel: ch,
                n_channels: n_channels as u32,
            });
        }
        let step = (t * 1000.0 / dt).floor();
        if step < n_timesteps as f64 {
            events.push(InputEvent {
                step: step as u32,
                channel: ch,
            });
        }
    }
    events.sort_unstable_by_key(|e| (e.step, e.channel));
    Ok(events)
}

/// Bin every sample of a dataset.
pub fn bin_dataset(ds: &SpikingDataset, dt: f64, n_timesteps: usize) -> Result<Vec<BinnedSample>> {
    (0..ds.n_samples())
        .map(|i| {
            Ok(BinnedSample {
                events: bin_sample(&ds.times_s[i], &ds.units[i], i, dt, n_timesteps, ds.n_channels)?,
                label: ds.labels[i],
            })
        })
        .collect()
}

/// Synthetic timing-code task parameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_classes: usize,
    pub n_channels: usize,
    pub n_train_per_class: usize,
    pub n_test_per_class: usize,
    /// Channels are partitioned once (shared by every class) into this many
    /// near-equal groups; all channels of a group fire at the same
    /// class-dependent time. Equal group membership across classes is what
    /// blanks out the "which channels co-fire" cue for delay-free networks.
    pub n_groups: usize,
    /// Group firing times are drawn uniformly from `[0, window_ms)`; the same
    /// window is the period of the per-sample circular shift.
    pub window_ms: f64,
    /// Gaussian timing jitter added per spike.
    pub jitter_ms: f64,
    /// Minimum circular gap between any two group times *within* a class.
    /// Keeping groups several membrane time constants apart stops a
    /// delay-free neuron from reading gaps off overlapping synaptic tails.
    pub min_group_gap_ms: f64,
    /// Minimum circular L-infinity distance between the group-time vectors of
    /// two classes, enforced against every global rotation (the per-sample
    /// shift makes rotated vectors equivalent). Guarantees that no alignment
    /// brings all groups of one class within the jitter scale of another's.
    /// Capped at `window_ms / 2`, the largest possible circular distance.
    pub min_separation_ms: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_classes: 4,
            n_channels: 64,
            n_train_per_class: 64,
            n_test_per_class: 16,
            n_groups: 4,
            window_ms: 50.0,
            jitter_ms: 1.0,
            min_group_gap_ms: 10.0,
            min_separation_ms: 8.0,
            seed: 42,
        }
    }
}

/// A generated timing-code task: train/test splits plus the ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub train: SpikingDataset,
    pub test: SpikingDataset,
    /// Per-channel firing offsets, `[n_classes x n_channels]` in ms; channel
    /// `c` of class `k` fires at `(offsets_ms[[k, c]] + shift) mod window`.
    pub offsets_ms: Array2<f64>,
    /// Which group each channel belongs to (same for every class).
    pub group_of: Vec<usize>,
    /// Group firing times, `[n_classes x n_groups]` in ms.
    pub group_times_ms: Array2<f64>,
}

/// Generate a rate-blind, timing-coded classification task.
///
/// Every sample spikes exactly once per channel, so per-channel spike counts
/// carry zero class information. The channels are partitioned once into
/// `n_groups` near-equal groups shared by every class; all channels of a
/// group fire together at a class-dependent group time. Because membership is
/// identical across classes, "which channels co-fire" is just as
/// uninformative as the rates — the class lives purely in the circular gap
/// pattern between group times.
///
/// Each sample also gets a random circular time shift `s ~ U[0, window_ms)`
/// applied to all channels: channel `c` lands at `(offset[class][c] + s) mod
/// window_ms` plus jitter. The shift makes every channel's *absolute* spike
/// time uniform on the window regardless of class, so a readout keyed to
/// when spikes arrive sees identical per-channel marginals for every class.
/// What survives is the relative circular timing between groups, which a
/// detector can only exploit by re-aligning channels against each other,
/// e.g. with per-synapse delays `window_ms - offset[c]` that collapse a
/// class's spikes into one coincident packet at `s + window_ms` no matter
/// the shift.
///
/// Class group-time vectors are rejection-sampled to keep every within-class
/// gap at least `min_group_gap_ms` and a `min_separation_ms` circular
/// L-infinity margin between classes under every global rotation, since
/// rotated vectors are indistinguishable once the shift is applied.
pub fn synthetic_delay_task(cfg: &SyntheticConfig) -> Result<SyntheticTask> {
    if cfg.n_classes < 2 || cfg.n_channels == 0 {
        return Err(Error::InvalidConfig(
            "synthetic task needs >= 2 classes and >= 1 channel".into(),
        ));
    }
    if cfg.n_groups < 2 || cfg.n_groups > cfg.n_channels {
        return Err(Error::InvalidConfig(
            "synthetic task needs between 2 and n_channels groups".into(),
        ));
    }
    if !(cfg.window_ms > 0.0
        && cfg.jitter_ms >= 0.0
        && cfg.min_separation_ms >= 0.0
        && cfg.min_group_gap_ms >= 0.0)
    {
        return Err(Error::InvalidConfig("synthetic task timing parameters invalid".into()));
    }
    if cfg.min_separation_ms > cfg.window_ms / 2.0 {
        return Err(Error::InvalidConfig(
            "min_separation_ms cannot exceed window_ms / 2, the largest circular distance".into(),
        ));
    }
    if cfg.min_group_gap_ms * cfg.n_groups as f64 > cfg.window_ms {
        return Err(Error::InvalidConfig(
            "n_groups gaps of min_group_gap_ms cannot fit in window_ms".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Circular distance between two times on a window of period `w`.
    let circ_dist = |a: f64, b: f64, w: f64| {
        let d = (a - b).rem_euclid(w);
        d.min(w - d)
    };

    // Fixed random channel -> group assignment, shared by all classes.
    let mut group_of: Vec<usize> = (0..cfg.n_channels).map(|c| c % cfg.n_groups).collect();
    for i in (1..group_of.len()).rev() {
        group_of.swap(i, rng.gen_range(0..=i));
    }

    // Rejection-sample per-class group-time vectors: within a class all
    // pairwise circular gaps stay above `min_group_gap_ms`; between classes a
    // rotation-invariant circular L-infinity margin holds — for every
    // candidate rotation at least one group must sit `min_separation_ms`
    // away from each existing class.
    let n_rotations = 256;
    let mut group_times: Array2<f64> = Array2::zeros((cfg.n_classes, cfg.n_groups));
    let max_attempts = 2000 * cfg.n_classes;
    let mut attempts = 0;
    let mut c = 0;
    while c < cfg.n_classes {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::InvalidConfig(format!(
                "could not place {} group-time vectors with {} ms gaps and {} ms separation \
                 in a {} ms window",
                cfg.n_classes, cfg.min_group_gap_ms, cfg.min_separation_ms, cfg.window_ms
            )));
        }
        let candidate: Vec<f64> =
            (0..cfg.n_groups).map(|_| rng.gen_range(0.0..cfg.window_ms)).collect();
        let gaps_ok = (0..cfg.n_groups).all(|g| {
            (g + 1..cfg.n_groups)
                .all(|h| circ_dist(candidate[g], candidate[h], cfg.window_ms) >= cfg.min_group_gap_ms)
        });
        let far_enough = gaps_ok
            && (0..c).all(|other| {
                (0..n_rotations).all(|r| {
                    let rot = r as f64 / n_rotations as f64 * cfg.window_ms;
                    let linf = candidate
                        .iter()
                        .enumerate()
                        .map(|(g, &v)| circ_dist(v + rot, group_times[[other, g]], cfg.window_ms))
                        .fold(0.0, f64::max);
                    linf >= cfg.min_separation_ms
                })
            });
        if far_enough {
            for (g, &v) in candidate.iter().enumerate() {
                group_times[[c, g]] = v;
            }
            c += 1;
        }
    }

    let mut offsets: Array2<f64> = Array2::zeros((cfg.n_classes, cfg.n_channels));
    for k in 0..cfg.n_classes {
        for ch in 0..cfg.n_channels {
            offsets[[k, ch]] = group_times[[k, group_of[ch]]];
        }
    }

    let jitter = Normal::new(0.0, cfg.jitter_ms.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidConfig(format!("jitter distribution: {e}")))?;
    let generate = |per_class: usize, rng: &mut ChaCha8Rng| -> SpikingDataset {
        let n = per_class * cfg.n_classes;
        let mut times_s = Vec::with_capacity(n);
        let mut units = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for class in 0..cfg.n_classes {
            for _ in 0..per_class {
                let shift = rng.gen_range(0.0..cfg.window_ms);
                let mut pairs: Vec<(f64, u32)> = (0..cfg.n_channels)
                    .map(|ch| {
                        let base = (offsets[[class, ch]] + shift) % cfg.window_ms;
                        let t_ms = (base + jitter.sample(rng)).max(0.0);
                        (t_ms / 1000.0, ch as u32)
                    })
                    .collect();
                pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                times_s.push(pairs.iter().map(|p| p.0).collect());
                units.push(pairs.iter().map(|p| p.1).collect());
                labels.push(class as u32);
            }
        }
        SpikingDataset {
            times_s,
            units,
            labels,
            n_channels: cfg.n_channels,
            n_classes: cfg.n_classes,
        }
    };
    let train = generate(cfg.n_train_per_class, &mut rng);
    let test = generate(cfg.n_test_per_class, &mut rng);
    Ok(SyntheticTask {
        train,
        test,
        offsets_ms: offsets,
        group_of,
        group_times_ms: group_times,
    })
}
