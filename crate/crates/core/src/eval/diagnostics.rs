//! Representation-level bias diagnostics: group exposure in top-K lists,
//! per-group BPR loss, popular-vs-tail score gap and angular densities of
//! two-dimensional representations.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{GroupAssignment, InteractionSet};
use crate::embeddings::EmbeddingState;
use crate::error::{Error, Result};
use crate::losses::bpr_term;
use crate::matrix::dot;
use crate::trainer::sampling::sample_negative;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupExposure {
    /// Share of top-K slots held by popular items.
    pub popular: f64,
    pub tail: f64,
    /// Share of test interactions on popular items, for comparison.
    pub test_popular: f64,
    pub test_tail: f64,
}

/// Fraction of filled top-K slots, over all lists, occupied by each item group.
pub fn group_exposure<'a>(
    top_lists: impl IntoIterator<Item = &'a [usize]>,
    groups: &GroupAssignment,
    test: &InteractionSet,
) -> GroupExposure {
    let (mut popular, mut slots) = (0usize, 0usize);
    for list in top_lists {
        slots += list.len();
        popular += list.iter().filter(|&&i| groups.is_popular_item(i)).count();
    }
    let share = |part: usize, whole: usize| {
        if whole == 0 {
            0.0
        } else {
            part as f64 / whole as f64
        }
    };
    let test_popular = test.pairs().filter(|&(_, i)| groups.is_popular_item(i)).count();
    let p = share(popular, slots);
    let tp = share(test_popular, test.len());
    GroupExposure {
        popular: p,
        tail: if slots == 0 { 0.0 } else { 1.0 - p },
        test_popular: tp,
        test_tail: if test.is_empty() { 0.0 } else { 1.0 - tp },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossGap {
    /// Mean BPR loss over training triples of popular users.
    pub popular: f64,
    pub tail: f64,
    /// `popular - tail`.
    pub gap: f64,
}

/// Per-user-group mean BPR loss over the training interactions, each paired
/// with a fresh negative drawn from a `seed`-ed generator.
pub fn loss_gap(
    train: &InteractionSet,
    groups: &GroupAssignment,
    reps: &EmbeddingState,
    seed: u64,
) -> Result<LossGap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum_pop, mut n_pop, mut sum_tail, mut n_tail) = (0.0, 0usize, 0.0, 0usize);
    for (u, i) in train.pairs() {
        let j = sample_negative(u, train, &mut rng)?;
        let z = reps.user.row(u);
        let loss = bpr_term(dot(z, reps.item.row(i)), dot(z, reps.item.row(j)));
        if groups.is_popular_user(u) {
            sum_pop += loss;
            n_pop += 1;
        } else {
            sum_tail += loss;
            n_tail += 1;
        }
    }
    if n_pop == 0 || n_tail == 0 {
        return Err(Error::Undefined("a user group has no training interactions".into()));
    }
    let popular = sum_pop / n_pop as f64;
    let tail = sum_tail / n_tail as f64;
    Ok(LossGap {
        popular,
        tail,
        gap: popular - tail,
    })
}

fn group_mean(reps: &EmbeddingState, members: &[usize]) -> Vec<f64> {
    let mut mean = vec![0.0; reps.dim()];
    for &i in members {
        for (m, h) in mean.iter_mut().zip(reps.item.row(i)) {
            *m += h;
        }
    }
    mean.iter_mut().for_each(|m| *m /= members.len() as f64);
    mean
}

/// Mean score of user `u` over popular items minus its mean over tail items.
pub fn score_gap(u: usize, groups: &GroupAssignment, reps: &EmbeddingState) -> Result<f64> {
    let gaps = ScoreGapProbe::new(groups, reps)?;
    Ok(gaps.user(u, reps))
}

/// [`score_gap`] averaged over all users.
pub fn mean_score_gap(groups: &GroupAssignment, reps: &EmbeddingState) -> Result<f64> {
    let probe = ScoreGapProbe::new(groups, reps)?;
    let m = reps.num_users();
    Ok((0..m).map(|u| probe.user(u, reps)).sum::<f64>() / m as f64)
}

struct ScoreGapProbe {
    popular_mean: Vec<f64>,
    tail_mean: Vec<f64>,
}

impl ScoreGapProbe {
    fn new(groups: &GroupAssignment, reps: &EmbeddingState) -> Result<Self> {
        let (pop, tail) = (groups.popular_items(), groups.tail_items());
        if pop.is_empty() || tail.is_empty() {
            return Err(Error::Undefined("an item group is empty".into()));
        }
        Ok(ScoreGapProbe {
            popular_mean: group_mean(reps, &pop),
            tail_mean: group_mean(reps, &tail),
        })
    }

    fn user(&self, u: usize, reps: &EmbeddingState) -> f64 {
        let z = reps.user.row(u);
        dot(z, &self.popular_mean) - dot(z, &self.tail_mean)
    }
}

pub const ANGLE_GRID_POINTS: usize = 360;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngularDensity {
    /// Evaluation angles, evenly spaced over `[-π, π]` inclusive.
    pub angles: Vec<f64>,
    pub density: Vec<f64>,
}

/// Wrapped-Gaussian kernel density of the polar angles of two-dimensional rows.
pub fn angular_density(reps: &crate::matrix::Matrix, bandwidth: f64) -> Result<AngularDensity> {
    if reps.cols() != 2 {
        return Err(Error::Shape(format!(
            "angular density needs 2-dimensional rows, got {}",
            reps.cols()
        )));
    }
    if reps.rows() == 0 {
        return Err(Error::Undefined("angular density of an empty set".into()));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::Config(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let thetas: Vec<f64> = reps.iter_rows().map(|r| r[1].atan2(r[0])).collect();
    // enough images that the truncated wrap sum is accurate for any sensible bandwidth
    let wraps = (3.0 + 6.0 * bandwidth / (2.0 * PI)).ceil() as i32;
    let norm = 1.0 / (thetas.len() as f64 * bandwidth * (2.0 * PI).sqrt());
    let step = 2.0 * PI / (ANGLE_GRID_POINTS - 1) as f64;
    let angles: Vec<f64> = (0..ANGLE_GRID_POINTS).map(|k| -PI + k as f64 * step).collect();
    let density = angles
        .iter()
        .map(|&a| {
            let mut s = 0.0;
            for &t in &thetas {
                for w in -wraps..=wraps {
                    let d = (a - t + 2.0 * PI * w as f64) / bandwidth;
                    s += (-0.5 * d * d).exp();
                }
            }
            s * norm
        })
        .collect();
    Ok(AngularDensity { angles, density })
}
