//! `aurl prepare | train | evaluate | audit`.
//!
//! Exit codes: 0 success, 2 input error, 3 training abort, 4 artifact mismatch.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::backbones::{Backbone, BackboneConfig, BackboneKind};
use crate::config::{BandwidthSetting, ExperimentConfig};
use crate::dataset::{
    assign_groups, compute_popularity, filter_k_core, load_interactions, GroupAssignment,
    InteractionSet, Manifest, Split,
};
use crate::embeddings::{
    load_checkpoint, load_checkpoint_meta, save_checkpoint, CheckpointMeta, EmbeddingState,
};
use crate::error::{Error, Result};
use crate::eval::{
    angular_density, evaluate, group_exposure, loss_gap, mean_score_gap, rank_all_users,
    GroupExposure, LossGap, MetricReport,
};
use crate::io::{read_json, write_atomic, write_json_atomic};
use crate::synthetic::{generate, SyntheticConfig};
use crate::trainer::{fit_with, EpochRecord};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_TRAIN_ABORT: i32 = 3;
pub const EXIT_MISMATCH: i32 = 4;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const REPORT_FILE: &str = "metrics.json";
pub const AUDIT_FILE: &str = "audit.json";
pub const EXPOSURE_FILE: &str = "exposure.csv";
pub const ANGLE_FILE: &str = "angular_density.csv";

#[derive(Debug, Parser)]
#[command(name = "aurl", version, about = "Popularity-debiased collaborative filtering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// 5-core filter, per-user split, popularity groups.
    Prepare {
        #[command(flatten)]
        common: CommonArgs,
        /// Raw `user<TAB>item` interaction file.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Use the built-in synthetic dataset instead of an input file.
        #[arg(long)]
        synthetic: bool,
    },
    /// Train and keep the best-validation checkpoint.
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Write the metric report for a checkpoint.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Write representation and exposure diagnostics for a checkpoint.
    Audit {
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Prepared split directory (defaults to `--out`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub backbone: Option<String>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub top_fraction: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs_max: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub bandwidth: Option<String>,
    /// Cutoffs, comma-separated or repeated.
    #[arg(long, value_delimiter = ',')]
    pub k: Vec<usize>,
}

impl CommonArgs {
    /// Config file (or defaults) with every given flag applied on top.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    cfg.$field = v;
                }
            )*};
        }
        set!(seed, out, lambda1, lambda2, layers, top_fraction, dim, batch_size, lr, epochs_max, patience);
        if let Some(d) = &self.data {
            cfg.data_dir = Some(d.clone());
        }
        if let Some(c) = &self.checkpoint {
            cfg.checkpoint = Some(c.clone());
        }
        if let Some(b) = &self.backbone {
            cfg.backbone = b.parse()?;
        }
        if let Some(b) = &self.bandwidth {
            cfg.bandwidth = BandwidthSetting::Rule(b.clone());
        }
        if !self.k.is_empty() {
            cfg.k = self.k.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(failure) => {
            eprintln!("error: {}", failure.error);
            failure.code
        }
    }
}

/// Error plus the exit code it maps to.
pub struct Failure {
    pub error: Error,
    pub code: i32,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let code = match error {
            Error::Shape(_) | Error::Format(_) | Error::Corrupt(_) => EXIT_MISMATCH,
            _ => EXIT_INPUT,
        };
        Failure { error, code }
    }
}

fn dispatch(command: Command) -> std::result::Result<(), Failure> {
    match command {
        Command::Prepare {
            common,
            input,
            synthetic,
        } => {
            let mut cfg = common.resolve()?;
            if input.is_some() {
                cfg.input = input;
            }
            cfg.synthetic |= synthetic;
            cmd_prepare(&cfg)?;
        }
        Command::Train { common } => cmd_train(&common.resolve()?)?,
        Command::Evaluate { common } => {
            cmd_evaluate(&common.resolve()?)?;
        }
        Command::Audit { common } => {
            cmd_audit(&common.resolve()?)?;
        }
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Reads the raw data, filters, splits and writes `train.tsv`, `valid.tsv`,
/// `test.tsv` and `manifest.json` into `cfg.out`.
pub fn cmd_prepare(cfg: &ExperimentConfig) -> Result<Manifest> {
    let raw = match (&cfg.input, cfg.synthetic) {
        (_, true) => generate(&SyntheticConfig {
            seed: cfg.synthetic_seed,
            ..SyntheticConfig::default()
        })?,
        (Some(path), false) => load_interactions(path)?,
        (None, false) => {
            return Err(Error::Config("prepare needs --input PATH or --synthetic".into()))
        }
    };
    let core = filter_k_core(&raw, cfg.k_core);
    if core.is_empty() {
        return Err(Error::EmptyDataset(format!("nothing survives the {}-core filter", cfg.k_core)));
    }
    let split = crate::dataset::split_per_user(&core, cfg.split_ratios(), cfg.seed)?;
    let pop = compute_popularity(&split.train);
    let groups = assign_groups(&pop, cfg.top_fraction)?;
    let manifest = Manifest::new(&split, &pop, &groups);

    create_dir(&cfg.out)?;
    split.train.write_dense(&cfg.out.join("train.tsv"))?;
    split.valid.write_dense(&cfg.out.join("valid.tsv"))?;
    split.test.write_dense(&cfg.out.join("test.tsv"))?;
    write_json_atomic(&cfg.out.join(MANIFEST_FILE), &manifest)?;
    eprintln!(
        "prepared {} users, {} items: {} train / {} valid / {} test",
        manifest.num_users, manifest.num_items, manifest.num_train, manifest.num_valid, manifest.num_test
    );
    Ok(manifest)
}

/// A prepared split read back from disk.
pub struct Prepared {
    pub manifest: Manifest,
    pub split: Split,
    pub groups: GroupAssignment,
}

pub fn load_prepared(dir: &Path) -> Result<Prepared> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST_FILE))?;
    let (m, n) = (manifest.num_users, manifest.num_items);
    let load = |name: &str| InteractionSet::load_dense(&dir.join(name), m, n);
    let split = Split {
        train: load("train.tsv")?,
        valid: load("valid.tsv")?,
        test: load("test.tsv")?,
        seed: manifest.seed,
    };
    if split.train.len() != manifest.num_train
        || split.valid.len() != manifest.num_valid
        || split.test.len() != manifest.num_test
        || manifest.user_group.len() != m
        || manifest.item_group.len() != n
    {
        return Err(Error::Shape(format!("split files in {} disagree with the manifest", dir.display())));
    }
    let groups = manifest.groups();
    Ok(Prepared {
        manifest,
        split,
        groups,
    })
}

fn meta_for(cfg: &ExperimentConfig, epoch: usize, val: f64) -> Result<CheckpointMeta> {
    Ok(CheckpointMeta {
        epoch,
        val_ndcg20: val,
        config: serde_json::to_value(cfg)?,
    })
}

fn render_log(log: &[EpochRecord]) -> Result<String> {
    let mut out = String::new();
    for r in log {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Trains on the prepared split. The best-validation checkpoint and the
/// epoch log are rewritten atomically after every epoch.
pub fn cmd_train(cfg: &ExperimentConfig) -> std::result::Result<(), Failure> {
    let train_cfg = cfg.train_config()?;
    let prepared = load_prepared(&cfg.data_dir())?;
    create_dir(&cfg.out)?;
    let ckpt = cfg.checkpoint_path();
    let log_path = cfg.out.join(TRAIN_LOG_FILE);
    let mut log = Vec::new();

    let outcome = fit_with(&prepared.split, &prepared.groups, &train_cfg, |ev| {
        if ev.improved {
            save_checkpoint(ev.state, &ckpt, Some(&meta_for(cfg, ev.record.epoch, ev.record.val_ndcg20)?))?;
        }
        log.push(ev.record.clone());
        write_atomic(&log_path, render_log(&log)?.as_bytes())?;
        eprintln!(
            "epoch {:>3}  loss {:.5}  rec {:.5}  align {:.5}  uniform {:.5}  val ndcg@20 {:.5}",
            ev.record.epoch, ev.record.total, ev.record.rec, ev.record.align, ev.record.uniform, ev.record.val_ndcg20
        );
        Ok(())
    });
    match outcome {
        Ok(fit) => {
            eprintln!("best epoch {} (val ndcg@20 {:.5})", fit.best_epoch, fit.best_val_ndcg);
            Ok(())
        }
        Err(e @ Error::NonFinite(_)) => Err(Failure {
            error: e,
            code: EXIT_TRAIN_ABORT,
        }),
        Err(e) => Err(e.into()),
    }
}

/// Loads the checkpoint, checks it against the prepared split and returns the
/// final representations.
pub fn load_model(cfg: &ExperimentConfig, prepared: &Prepared) -> Result<(EmbeddingState, EmbeddingState)> {
    let path = cfg.checkpoint_path();
    let ego = load_checkpoint(&path)?;
    let (m, n) = (prepared.manifest.num_users, prepared.manifest.num_items);
    if ego.num_users() != m || ego.num_items() != n {
        return Err(Error::Shape(format!(
            "checkpoint {} is {}x{} users/items, split is {m}x{n}",
            path.display(),
            ego.num_users(),
            ego.num_items()
        )));
    }
    let backbone_cfg = match load_checkpoint_meta(&path) {
        Ok(meta) => {
            let trained: ExperimentConfig = serde_json::from_value(meta.config)?;
            if trained.dim != ego.dim() {
                return Err(Error::Shape(format!(
                    "checkpoint rows have dimension {}, its metadata says {}",
                    ego.dim(),
                    trained.dim
                )));
            }
            trained.backbone_config()
        }
        Err(Error::Io { .. }) => cfg.backbone_config(),
        Err(e) => return Err(e),
    };
    let reps = backbone_forward(backbone_cfg, &prepared.split.train, &ego)?;
    Ok((ego, reps))
}

fn backbone_forward(cfg: BackboneConfig, train: &InteractionSet, ego: &EmbeddingState) -> Result<EmbeddingState> {
    match cfg.kind {
        BackboneKind::Bprmf => Ok(ego.clone()),
        BackboneKind::Lightgcn => Backbone::new(cfg, train)?.forward(ego),
    }
}

pub fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<MetricReport> {
    let prepared = load_prepared(&cfg.data_dir())?;
    let (_, reps) = load_model(cfg, &prepared)?;
    let report = evaluate(
        &reps,
        &prepared.split,
        &prepared.groups,
        &prepared.manifest.popularity(),
        &cfg.k,
        cfg.seed,
    )?;
    create_dir(&cfg.out)?;
    write_json_atomic(&cfg.out.join(REPORT_FILE), &report)?;
    for c in &report.cutoffs {
        eprintln!("HR@{k} {:.5}  NDCG@{k} {:.5}  DP@{k} {:?}", c.hr, c.ndcg, c.dp, k = c.k);
    }
    eprintln!("PRU {:?}", report.pru);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureAtK {
    pub k: usize,
    #[serde(flatten)]
    pub exposure: GroupExposure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditBundle {
    pub score_gap: Option<f64>,
    pub loss_gap: Option<LossGap>,
    pub group_exposure: Vec<ExposureAtK>,
    /// Written only for 2-dimensional representations.
    pub angular_density_csv: Option<String>,
}

pub fn cmd_audit(cfg: &ExperimentConfig) -> Result<AuditBundle> {
    let prepared = load_prepared(&cfg.data_dir())?;
    let (_, reps) = load_model(cfg, &prepared)?;
    let groups = &prepared.groups;
    create_dir(&cfg.out)?;

    let lists = rank_all_users(&reps, &prepared.split);
    let exposure: Vec<ExposureAtK> = cfg
        .k
        .iter()
        .map(|&k| ExposureAtK {
            k,
            exposure: group_exposure(lists.iter().map(|l| l.top(k)), groups, &prepared.split.test),
        })
        .collect();
    let mut csv = String::from("k,group,exposure,test_share\n");
    for e in &exposure {
        let x = &e.exposure;
        let _ = writeln!(csv, "{},popular,{},{}", e.k, x.popular, x.test_popular);
        let _ = writeln!(csv, "{},tail,{},{}", e.k, x.tail, x.test_tail);
    }
    write_atomic(&cfg.out.join(EXPOSURE_FILE), csv.as_bytes())?;

    let mut angle_csv = None;
    if cfg.angular_density {
        if reps.dim() == 2 {
            let path = cfg.out.join(ANGLE_FILE);
            write_atomic(&path, angle_density_csv(&reps, groups, cfg.angle_bandwidth)?.as_bytes())?;
            angle_csv = Some(ANGLE_FILE.to_string());
        } else {
            eprintln!(
                "warning: angular density needs 2-dimensional representations, got {}; skipped",
                reps.dim()
            );
        }
    }

    let bundle = AuditBundle {
        score_gap: mean_score_gap(groups, &reps).ok(),
        loss_gap: loss_gap(&prepared.split.train, groups, &reps, cfg.seed).ok(),
        group_exposure: exposure,
        angular_density_csv: angle_csv,
    };
    write_json_atomic(&cfg.out.join(AUDIT_FILE), &bundle)?;
    Ok(bundle)
}

fn angle_density_csv(reps: &EmbeddingState, groups: &GroupAssignment, bandwidth: f64) -> Result<String> {
    let sets = [
        ("popular_users", &reps.user, groups.popular_users()),
        ("tail_users", &reps.user, groups.tail_users()),
        ("popular_items", &reps.item, groups.popular_items()),
        ("tail_items", &reps.item, groups.tail_items()),
    ];
    let mut csv = String::from("angle,density,group\n");
    for (name, matrix, members) in sets {
        if members.is_empty() {
            continue;
        }
        let d = angular_density(&matrix.gather(&members), bandwidth)?;
        for (a, v) in d.angles.iter().zip(&d.density) {
            let _ = writeln!(csv, "{a},{v},{name}");
        }
    }
    Ok(csv)
}
