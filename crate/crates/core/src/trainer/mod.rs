//! Mini-batch Adam training of the regularized objective with early stopping
//! on validation NDCG@20.

pub mod adam;
pub mod objective;
pub mod sampling;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbones::{Backbone, BackboneConfig};
use crate::dataset::{GroupAssignment, Split};
use crate::embeddings::EmbeddingState;
use crate::error::{Error, Result};
use crate::eval::validation_ndcg;
use crate::losses::{KernelConfig, LossBreakdown, LossWeights};

pub use adam::{adam_step, AdamState};
pub use objective::{FrozenTargets, Objective, ObjectiveValue};
pub use sampling::{make_batches, sample_negative, GroupPools, TrainBatch};

pub const VALIDATION_K: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs_max: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda: f64,
    pub dim: usize,
    pub neg_per_pos: usize,
    pub seed: u64,
    pub backbone: BackboneConfig,
    pub kernel: KernelConfig,
    pub align_sample_cap: usize,
    pub top_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 2048,
            lr: 0.001,
            epochs_max: 300,
            patience: 10,
            lambda1: 0.1,
            lambda2: 0.1,
            lambda: 1e-4,
            dim: 64,
            neg_per_pos: 1,
            seed: 2024,
            backbone: BackboneConfig::default(),
            kernel: KernelConfig::default(),
            align_sample_cap: 512,
            top_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda: self.lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        for (name, v) in [
            ("lr", self.lr),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda", self.lambda),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        if self.dim == 0 || self.neg_per_pos == 0 || self.align_sample_cap == 0 {
            return bad("dim, neg_per_pos and align_sample_cap must be at least 1".into());
        }
        if self.backbone.layers > 4 {
            return bad(format!("layers must lie in 0..=4, got {}", self.backbone.layers));
        }
        if !(self.top_fraction > 0.0 && self.top_fraction < 1.0) {
            return bad(format!("top_fraction must lie in (0, 1), got {}", self.top_fraction));
        }
        self.kernel.validate()
    }
}

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub rec: f64,
    pub align: f64,
    pub uniform: f64,
    pub l2: f64,
    pub total: f64,
    pub val_ndcg20: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Ego embeddings of the best validation epoch.
    pub best: EmbeddingState,
    pub best_epoch: usize,
    pub best_val_ndcg: f64,
    pub log: Vec<EpochRecord>,
}

/// Progress notification passed to [`fit_with`] after every epoch.
pub struct EpochEvent<'a> {
    pub record: &'a EpochRecord,
    pub state: &'a EmbeddingState,
    pub improved: bool,
}

pub fn fit(split: &Split, groups: &GroupAssignment, config: &TrainConfig) -> Result<FitResult> {
    fit_with(split, groups, config, |_| Ok(()))
}

/// [`fit`] with a callback after every completed epoch.
pub fn fit_with<F>(
    split: &Split,
    groups: &GroupAssignment,
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<FitResult>
where
    F: FnMut(EpochEvent<'_>) -> Result<()>,
{
    config.validate()?;
    if split.train.is_empty() {
        return Err(Error::EmptyDataset("training split".into()));
    }
    let pools = GroupPools::new(groups);
    if config.lambda1 > 0.0
        && [&pools.popular_users, &pools.tail_users, &pools.popular_items, &pools.tail_items]
            .iter()
            .any(|p| p.is_empty())
    {
        return Err(Error::Config(
            "group alignment needs non-empty popular and tail groups on both sides".into(),
        ));
    }

    let backbone = Backbone::new(config.backbone, &split.train)?;
    let objective = Objective {
        backbone: &backbone,
        groups,
        weights: config.weights(),
        kernel: config.kernel,
    };
    let mut params = EmbeddingState::xavier(split.num_users(), split.num_items(), config.dim, config.seed);
    let mut adam = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(7);

    let started = Instant::now();
    let mut log = Vec::new();
    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut best_val = f64::NEG_INFINITY;
    let mut since_best = 0;

    for epoch in 1..=config.epochs_max {
        let batches = make_batches(
            &split.train,
            &pools,
            config.batch_size,
            config.neg_per_pos,
            config.align_sample_cap,
            &mut rng,
        )?;
        let mut sum = LossBreakdown::default();
        for batch in &batches {
            let value = objective.step(&params, batch)?;
            let b = value.breakdown;
            if !b.total.is_finite() {
                return Err(Error::NonFinite(format!("loss in epoch {epoch}: {b:?}")));
            }
            adam_step(&mut params, &value.grad, &mut adam, config.lr)?;
            sum.rec += b.rec;
            sum.align += b.align;
            sum.uniform += b.uniform;
            sum.l2 += b.l2;
            sum.total += b.total;
        }
        let nb = batches.len().max(1) as f64;
        let reps = backbone.forward(&params)?;
        let val = validation_ndcg(&reps, split, VALIDATION_K);
        let record = EpochRecord {
            epoch,
            rec: sum.rec / nb,
            align: sum.align / nb,
            uniform: sum.uniform / nb,
            l2: sum.l2 / nb,
            total: sum.total / nb,
            val_ndcg20: val,
            elapsed_s: started.elapsed().as_secs_f64(),
        };
        let improved = val > best_val;
        if improved {
            best_val = val;
            best_epoch = epoch;
            best = params.clone();
            since_best = 0;
        } else {
            since_best += 1;
        }
        on_epoch(EpochEvent {
            record: &record,
            state: &params,
            improved,
        })?;
        log.push(record);
        if since_best >= config.patience {
            break;
        }
    }

    Ok(FitResult {
        best,
        best_epoch,
        best_val_ndcg: best_val,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{assign_groups, compute_popularity, split_per_user, InteractionSet, SplitRatios};

    fn toy_split() -> (Split, GroupAssignment) {
        let pairs = (0..40).flat_map(|u| (0..10).map(move |k| (u, (u * 3 + k * k + k) % 35)));
        let set = InteractionSet::from_pairs(40, 35, pairs).unwrap();
        let split = split_per_user(&set, SplitRatios::default(), 1).unwrap();
        let groups = assign_groups(&compute_popularity(&split.train), 0.2).unwrap();
        (split, groups)
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            batch_size: 64,
            lr: 0.01,
            epochs_max: 6,
            patience: 100,
            dim: 8,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn patience_zero_runs_one_epoch() {
        let (split, groups) = toy_split();
        let cfg = TrainConfig {
            patience: 0,
            ..small_config()
        };
        let out = fit(&split, &groups, &cfg).unwrap();
        assert_eq!(out.log.len(), 1);
        assert_eq!(out.best_epoch, 1);
    }

    #[test]
    fn zero_weights_log_zero_regularizers() {
        let (split, groups) = toy_split();
        let cfg = TrainConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            ..small_config()
        };
        let out = fit(&split, &groups, &cfg).unwrap();
        assert!(out.log.iter().all(|r| r.align == 0.0 && r.uniform == 0.0));
    }

    #[test]
    fn best_epoch_has_max_validation_score() {
        let (split, groups) = toy_split();
        let out = fit(&split, &groups, &small_config()).unwrap();
        let max = out.log.iter().map(|r| r.val_ndcg20).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(out.best_val_ndcg, max);
        assert_eq!(out.log[out.best_epoch - 1].val_ndcg20, max);
    }

    #[test]
    fn training_is_deterministic() {
        let (split, groups) = toy_split();
        let a = fit(&split, &groups, &small_config()).unwrap();
        let b = fit(&split, &groups, &small_config()).unwrap();
        assert_eq!(a.best, b.best);
        assert_eq!(a.log.len(), b.log.len());
        for (x, y) in a.log.iter().zip(&b.log) {
            assert_eq!((x.total, x.val_ndcg20), (y.total, y.val_ndcg20));
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let (split, groups) = toy_split();
        let cfg = TrainConfig {
            batch_size: 0,
            ..small_config()
        };
        assert!(matches!(fit(&split, &groups, &cfg), Err(Error::Config(_))));
    }
}
