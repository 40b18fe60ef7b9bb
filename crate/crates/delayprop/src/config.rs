//! TOML run configuration shared by the command-line tools and the examples.
//!
//! A file describes one experiment end to end: network shape ([`network`]),
//! neuron constants ([`neuron`]), parameter initialization ([`init`]), the
//! training loop ([`train`], with the loss under `[train.loss]`), and the
//! dataset ([`data`]). Every field has a sensible default, so a minimal file
//! is just the handful of values an experiment actually pins down:
//!
//! ```toml
//! [network]
//! hidden = [128]
//! n_timesteps = 100
//!
//! [train]
//! epochs = 20
//!
//! [data]
//! kind = "synthetic"
//! ```
//!
//! The input and output population sizes are never written in the file; they
//! come from the dataset (`n_channels`/`n_classes`), which keeps one config
//! reusable across datasets. Unknown keys are rejected so typos fail loudly
//! instead of silently falling back to defaults.
//!
//! [`network`]: NetworkSection
//! [`neuron`]: NeuronSection
//! [`init`]: InitSection
//! [`train`]: TrainSection
//! [`data`]: DataConfig

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::data::{bin_dataset, load_hdf5_dataset, synthetic_delay_task, BinnedSample, SyntheticConfig};
use crate::error::{Error, Result};
use crate::eventprop::LossConfig;
use crate::model::{
    build_network, init_parameters, InitConfig, Network, NetworkSpec, NeuronParams,
    PopulationKind, PopulationSpec, ProjectionSpec,
};
use crate::train::TrainConfig;

/// Parsed contents of a run-configuration file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub neuron: NeuronSection,
    #[serde(default)]
    pub init: InitSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub data: DataConfig,
}

/// Network topology: a feedforward chain `input -> hidden... -> output`,
/// optionally with a self-projection on each hidden layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    /// Simulation step in milliseconds.
    pub dt: f64,
    /// Steps simulated per sample.
    pub n_timesteps: usize,
    /// Hidden layer sizes, input to output order.
    pub hidden: Vec<usize>,
    /// Add a trainable self-projection to every hidden layer.
    pub recurrent: bool,
    /// Train delays (weights always train).
    pub delays_trainable: bool,
    /// Upper box bound for delays, in milliseconds.
    pub max_delay: f64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            dt: 1.0,
            n_timesteps: 100,
            hidden: vec![128],
            recurrent: false,
            delays_trainable: true,
            max_delay: 62.0,
        }
    }
}

/// Neuron constants applied to every non-input population.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeuronSection {
    pub tau_mem: f64,
    pub tau_syn: f64,
    pub v_threshold: f64,
    pub v_reset: f64,
}

impl Default for NeuronSection {
    fn default() -> Self {
        let p = NeuronParams::default();
        NeuronSection {
            tau_mem: p.tau_mem,
            tau_syn: p.tau_syn,
            v_threshold: p.v_threshold,
            v_reset: p.v_reset,
        }
    }
}

impl NeuronSection {
    pub fn params(&self) -> NeuronParams {
        NeuronParams {
            tau_mem: self.tau_mem,
            tau_syn: self.tau_syn,
            v_threshold: self.v_threshold,
            v_reset: self.v_reset,
        }
    }
}

/// Parameter initialization (normal weights, uniform delays).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitSection {
    pub weight_mean: f64,
    pub weight_sd: f64,
    pub delay_low: f64,
    pub delay_high: f64,
    pub seed: u64,
}

impl Default for InitSection {
    fn default() -> Self {
        let c = InitConfig::default();
        InitSection {
            weight_mean: c.weight_mean,
            weight_sd: c.weight_sd,
            delay_low: c.delay_low,
            delay_high: c.delay_high,
            seed: c.seed,
        }
    }
}

impl InitSection {
    pub fn init_config(&self) -> InitConfig {
        InitConfig {
            weight_mean: self.weight_mean,
            weight_sd: self.weight_sd,
            delay_low: self.delay_low,
            delay_high: self.delay_high,
            seed: self.seed,
            ..InitConfig::default()
        }
    }
}

/// Training-loop settings; missing fields take [`TrainConfig`] defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr_weights: Option<f64>,
    pub lr_delays: Option<f64>,
    pub grad_clip: Option<f64>,
    pub seed: Option<u64>,
    pub loss: LossSection,
}

/// Loss and regularizer settings; missing fields take [`LossConfig`] defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    /// Readout time constant in milliseconds; omit for the full duration.
    pub tau_loss: Option<f64>,
    pub reg_strength: Option<f64>,
    pub target_rate_hz: Option<f64>,
}

impl TrainSection {
    pub fn train_config(&self) -> TrainConfig {
        let base = TrainConfig::default();
        let loss_base = LossConfig::default();
        TrainConfig {
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            lr_weights: self.lr_weights.unwrap_or(base.lr_weights),
            lr_delays: self.lr_delays.unwrap_or(base.lr_delays),
            grad_clip: self.grad_clip.or(base.grad_clip),
            seed: self.seed.unwrap_or(base.seed),
            loss: LossConfig {
                tau_loss: self.loss.tau_loss.or(loss_base.tau_loss),
                reg_strength: self.loss.reg_strength.unwrap_or(loss_base.reg_strength),
                target_rate_hz: self.loss.target_rate_hz.unwrap_or(loss_base.target_rate_hz),
            },
            ..base
        }
    }
}

/// Where samples come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataConfig {
    /// Generated timing-code task; see [`SyntheticConfig`].
    Synthetic {
        #[serde(default)]
        synthetic: SyntheticConfig,
    },
    /// Event datasets in the `spikes/times` + `spikes/units` + `labels`
    /// HDF5 layout, one file per split.
    Hdf5 { train: PathBuf, test: PathBuf },
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic {
            synthetic: SyntheticConfig::default(),
        }
    }
}

/// Binned train/test splits plus the sizes the network must match.
pub struct LoadedData {
    pub train: Vec<BinnedSample>,
    pub test: Vec<BinnedSample>,
    pub n_channels: usize,
    pub n_classes: usize,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let n = &self.network;
        if n.hidden.is_empty() || n.hidden.contains(&0) {
            return Err(Error::InvalidConfig(
                "network.hidden must list at least one nonzero layer size".into(),
            ));
        }
        if !(n.dt.is_finite() && n.dt > 0.0) || n.n_timesteps == 0 {
            return Err(Error::InvalidConfig(
                "network.dt must be > 0 and network.n_timesteps >= 1".into(),
            ));
        }
        if self.init.delay_high > n.max_delay {
            return Err(Error::InvalidConfig(format!(
                "init.delay_high ({}) exceeds network.max_delay ({})",
                self.init.delay_high, n.max_delay
            )));
        }
        self.train.train_config().validate()
    }

    /// Instantiate and initialize the network for a dataset of
    /// `n_channels` inputs and `n_classes` outputs.
    pub fn build_network(&self, n_channels: usize, n_classes: usize) -> Result<Network> {
        let n = &self.network;
        let params = self.neuron.params();
        let mut populations =
            vec![PopulationSpec::new("in", n_channels, PopulationKind::Input)];
        for (i, &size) in n.hidden.iter().enumerate() {
            let mut p = PopulationSpec::new(format!("h{i}"), size, PopulationKind::Hidden);
            p.params = params;
            populations.push(p);
        }
        let mut out = PopulationSpec::new("out", n_classes, PopulationKind::Output);
        out.params = params;
        populations.push(out);

        let mut projections = Vec::new();
        let names: Vec<String> = populations.iter().map(|p| p.name.clone()).collect();
        for w in names.windows(2) {
            let (src, tgt) = (&w[0], &w[1]);
            let n_src = populations.iter().find(|p| &p.name == src).unwrap().size;
            let n_tgt = populations.iter().find(|p| &p.name == tgt).unwrap().size;
            let mut proj = ProjectionSpec::zeros(src, tgt, n_src, n_tgt, n.max_delay);
            proj.delays_trainable = n.delays_trainable;
            projections.push(proj);
        }
        if n.recurrent {
            for (i, &size) in n.hidden.iter().enumerate() {
                let name = format!("h{i}");
                let mut proj = ProjectionSpec::zeros(&name, &name, size, size, n.max_delay);
                proj.delays_trainable = n.delays_trainable;
                projections.push(proj);
            }
        }

        let mut net = build_network(NetworkSpec {
            dt: n.dt,
            n_timesteps: n.n_timesteps,
            populations,
            projections,
        })?;
        init_parameters(&mut net, &self.init.init_config())?;
        Ok(net)
    }

    /// Load (or generate) the dataset and bin it onto this config's grid.
    pub fn load_data(&self) -> Result<LoadedData> {
        self.load_data_with(self.network.dt, self.network.n_timesteps)
    }

    /// Same as [`RunConfig::load_data`] but binned onto an explicit grid —
    /// used when a checkpoint or exchange file, not the config, owns the grid.
    pub fn load_data_with(&self, dt: f64, t: usize) -> Result<LoadedData> {
        match &self.data {
            DataConfig::Synthetic { synthetic } => {
                let task = synthetic_delay_task(synthetic)?;
                Ok(LoadedData {
                    train: bin_dataset(&task.train, dt, t)?,
                    test: bin_dataset(&task.test, dt, t)?,
                    n_channels: task.train.n_channels,
                    n_classes: task.train.n_classes,
                })
            }
            DataConfig::Hdf5 { train, test } => {
                for path in [train, test] {
                    if !path.exists() {
                        return Err(Error::InvalidDataset {
                            path: path.display().to_string(),
                            reason: "dataset not found".into(),
                        });
                    }
                }
                let train_ds = load_hdf5_dataset(train)?;
                let test_ds = load_hdf5_dataset(test)?;
                if train_ds.n_channels != test_ds.n_channels {
                    return Err(Error::InvalidConfig(format!(
                        "train and test splits disagree on channels ({} vs {})",
                        train_ds.n_channels, test_ds.n_channels
                    )));
                }
                Ok(LoadedData {
                    train: bin_dataset(&train_ds, dt, t)?,
                    test: bin_dataset(&test_ds, dt, t)?,
                    n_channels: train_ds.n_channels,
                    n_classes: train_ds.n_classes.max(test_ds.n_classes),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_parses_with_defaults() {
        let cfg: RunConfig = toml::from_str(
            r#"
            [network]
            hidden = [32]

            [data]
            kind = "synthetic"
            "#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.network.hidden, vec![32]);
        assert_eq!(cfg.network.dt, 1.0);
        assert_eq!(cfg.train.train_config().epochs, 30);
        assert!(matches!(cfg.data, DataConfig::Synthetic { .. }));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("[network]\nhiden = [32]\n").unwrap_err();
        assert!(err.to_string().contains("hiden"));
    }

    #[test]
    fn nested_loss_section_overrides_defaults() {
        let cfg: RunConfig = toml::from_str(
            r#"
            [train]
            epochs = 3

            [train.loss]
            reg_strength = 0.5
            tau_loss = 25.0
            "#,
        )
        .unwrap();
        let tc = cfg.train.train_config();
        assert_eq!(tc.epochs, 3);
        assert_eq!(tc.loss.reg_strength, 0.5);
        assert_eq!(tc.loss.tau_loss, Some(25.0));
        assert_eq!(tc.loss.target_rate_hz, 14.0);
        assert_eq!(tc.batch_size, 32);
    }

    #[test]
    fn built_network_matches_dataset_and_topology() {
        let cfg: RunConfig = toml::from_str(
            r#"
            [network]
            hidden = [24, 10]
            recurrent = true
            delays_trainable = false
            n_timesteps = 50

            [neuron]
            tau_mem = 15.0
            "#,
        )
        .unwrap();
        let net = cfg.build_network(7, 3).unwrap();
        let pops = &net.spec().populations;
        assert_eq!(
            pops.iter().map(|p| p.size).collect::<Vec<_>>(),
            vec![7, 24, 10, 3]
        );
        assert_eq!(pops[1].params.tau_mem, 15.0);
        // Chain projections plus one self-projection per hidden layer.
        let projs = &net.spec().projections;
        assert_eq!(projs.len(), 5);
        assert!(projs.iter().all(|p| !p.delays_trainable));
        assert!(projs.iter().any(|p| p.source == "h1" && p.target == "h1"));
    }

    #[test]
    fn synthetic_data_load_is_consistent_with_the_network() {
        let cfg: RunConfig = toml::from_str(
            r#"
            [network]
            hidden = [16]
            n_timesteps = 80

            [data]
            kind = "synthetic"

            [data.synthetic]
            n_classes = 3
            n_channels = 9
            n_train_per_class = 4
            n_test_per_class = 2
            "#,
        )
        .unwrap();
        let data = cfg.load_data().unwrap();
        assert_eq!(data.n_channels, 9);
        assert_eq!(data.n_classes, 3);
        assert_eq!(data.train.len(), 12);
        assert_eq!(data.test.len(), 6);
        let net = cfg.build_network(data.n_channels, data.n_classes).unwrap();
        assert_eq!(net.spec().populations[0].size, 9);
    }

    #[test]
    fn bad_delay_box_is_rejected() {
        let cfg: RunConfig = toml::from_str(
            r#"
            [network]
            max_delay = 10.0

            [init]
            delay_high = 20.0
            "#,
        )
        .unwrap();
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
    }
}
