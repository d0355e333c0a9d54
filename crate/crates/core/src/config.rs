//! Experiment configuration: a flat `key = value` file (TOML syntax) whose
//! entries can all be overridden from the command line.
//!
//! ```text
//! # data
//! input = "ratings.tsv"      # raw `user<TAB>item` file for `prepare`
//! synthetic = false          # generate the built-in synthetic dataset instead
//! out = "runs/mf"            # every artifact is written here
//! k_core = 5
//! # training
//! backbone = "bprmf"         # or "lightgcn"
//! layers = 3
//! lambda1 = 0.1
//! lambda2 = 0.1
//! bandwidth = "median"       # or a fixed positive gamma, e.g. 2.0
//! # evaluation
//! k = [20]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbones::{BackboneConfig, BackboneKind};
use crate::dataset::SplitRatios;
use crate::error::{Error, Result};
use crate::losses::{Bandwidth, KernelConfig};
use crate::synthetic::SyntheticConfig;
use crate::trainer::TrainConfig;

/// MMD bandwidth as written in the config: `"median"` or a number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BandwidthSetting {
    Rule(String),
    Gamma(f64),
}

impl BandwidthSetting {
    pub fn resolve(&self) -> Result<Bandwidth> {
        match self {
            BandwidthSetting::Rule(r) if r.eq_ignore_ascii_case("median") => Ok(Bandwidth::Median),
            BandwidthSetting::Rule(r) => r
                .parse::<f64>()
                .map(Bandwidth::Fixed)
                .map_err(|_| Error::Config(format!("bandwidth must be `median` or a number, got `{r}`"))),
            BandwidthSetting::Gamma(g) => Ok(Bandwidth::Fixed(*g)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub input: Option<PathBuf>,
    pub synthetic: bool,
    pub synthetic_seed: u64,
    /// Directory holding the prepared split; defaults to `out`.
    pub data_dir: Option<PathBuf>,
    pub out: PathBuf,
    /// Checkpoint to read or write; defaults to `<out>/model.ckpt`.
    pub checkpoint: Option<PathBuf>,
    pub k_core: usize,
    pub train_ratio: f64,
    pub valid_ratio: f64,
    pub test_ratio: f64,

    pub seed: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs_max: usize,
    pub patience: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda: f64,
    pub dim: usize,
    pub neg_per_pos: usize,
    pub backbone: BackboneKind,
    pub layers: usize,
    pub bandwidth: BandwidthSetting,
    pub t: f64,
    pub align_sample_cap: usize,
    pub top_fraction: f64,

    pub k: Vec<usize>,
    pub angular_density: bool,
    /// Kernel width in radians for the angular KDE.
    pub angle_bandwidth: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let r = SplitRatios::default();
        ExperimentConfig {
            input: None,
            synthetic: false,
            synthetic_seed: SyntheticConfig::default().seed,
            data_dir: None,
            out: PathBuf::from("out"),
            checkpoint: None,
            k_core: 5,
            train_ratio: r.train,
            valid_ratio: r.valid,
            test_ratio: r.test,
            seed: t.seed,
            batch_size: t.batch_size,
            lr: t.lr,
            epochs_max: t.epochs_max,
            patience: t.patience,
            lambda1: t.lambda1,
            lambda2: t.lambda2,
            lambda: t.lambda,
            dim: t.dim,
            neg_per_pos: t.neg_per_pos,
            backbone: t.backbone.kind,
            layers: t.backbone.layers,
            bandwidth: BandwidthSetting::Rule("median".into()),
            t: t.kernel.t,
            align_sample_cap: t.align_sample_cap,
            top_fraction: t.top_fraction,
            k: vec![20],
            angular_density: true,
            angle_bandwidth: 0.1,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", origin.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| self.out.clone())
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out.join("model.ckpt"))
    }

    pub fn split_ratios(&self) -> SplitRatios {
        SplitRatios {
            train: self.train_ratio,
            valid: self.valid_ratio,
            test: self.test_ratio,
        }
    }

    pub fn backbone_config(&self) -> BackboneConfig {
        BackboneConfig {
            kind: self.backbone,
            layers: self.layers,
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            batch_size: self.batch_size,
            lr: self.lr,
            epochs_max: self.epochs_max,
            patience: self.patience,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda: self.lambda,
            dim: self.dim,
            neg_per_pos: self.neg_per_pos,
            seed: self.seed,
            backbone: self.backbone_config(),
            kernel: KernelConfig {
                bandwidth: self.bandwidth.resolve()?,
                t: self.t,
            },
            align_sample_cap: self.align_sample_cap,
            top_fraction: self.top_fraction,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k.is_empty() || self.k.contains(&0) {
            return Err(Error::Config(format!("k values must be at least 1, got {:?}", self.k)));
        }
        if self.k_core == 0 {
            return Err(Error::Config("k_core must be at least 1".into()));
        }
        if !(self.angle_bandwidth > 0.0 && self.angle_bandwidth.is_finite()) {
            return Err(Error::Config("angle_bandwidth must be positive".into()));
        }
        self.train_config().map(|_| ())
    }
}
