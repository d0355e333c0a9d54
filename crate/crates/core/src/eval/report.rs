use serde::{Deserialize, Serialize};

use crate::backbones::score_block;
use crate::dataset::{GroupAssignment, PopularityTable, Split};
use crate::embeddings::EmbeddingState;
use crate::error::Result;

use super::diagnostics::{group_exposure, loss_gap, mean_score_gap, GroupExposure, LossGap};
use super::metrics::{dp_at_k, hr_at_k, ndcg_at_k, pru};
use super::ranking::{rank_items, top_k_items, RankedList};

/// Users scored per dense block.
const USER_BLOCK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub users: usize,
    pub hr: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffReport {
    pub k: usize,
    pub hr: f64,
    pub ndcg: f64,
    /// JSD between popular- and tail-user NDCG@K histograms; `None` if a group
    /// has no evaluable user.
    pub dp: Option<f64>,
    pub popular_users: GroupAccuracy,
    pub tail_users: GroupAccuracy,
    pub group_exposure: GroupExposure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub hit_ratio: String,
    pub pru_rank: String,
    pub pru_average: String,
    pub dp_accuracy: String,
    pub candidates: String,
}

impl Default for Conventions {
    fn default() -> Self {
        Conventions {
            hit_ratio: "hits in top-K divided by number of test items".into(),
            pru_rank: "1-based position in the full ranked candidate list, 1 = best".into(),
            pru_average: "mean over users with at least two test items and non-constant popularity and rank vectors".into(),
            dp_accuracy: "per-user NDCG@K, 20 equal-width bins on [0,1], base-2 JSD".into(),
            candidates: "all items except the user's training items".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub num_users: usize,
    pub num_items: usize,
    /// Users with at least one test item; accuracy metrics average over these.
    pub evaluated_users: usize,
    pub skipped_users_no_test: usize,
    pub cutoffs: Vec<CutoffReport>,
    pub pru: Option<f64>,
    pub pru_evaluated_users: usize,
    pub pru_skipped_users: usize,
    pub loss_gap: Option<LossGap>,
    pub score_gap: Option<f64>,
    pub conventions: Conventions,
}

impl MetricReport {
    pub fn cutoff(&self, k: usize) -> Option<&CutoffReport> {
        self.cutoffs.iter().find(|c| c.k == k)
    }
}

/// Ranks every user's candidates (train items excluded) against `reps`.
pub fn rank_all_users(reps: &EmbeddingState, split: &Split) -> Vec<RankedList> {
    let users: Vec<usize> = (0..reps.num_users()).collect();
    let mut out = Vec::with_capacity(users.len());
    for block in users.chunks(USER_BLOCK) {
        let scores = score_block(block, reps);
        for (row, &u) in block.iter().enumerate() {
            out.push(rank_items(u, scores.row(row), split.train.items_of(u)));
        }
    }
    out
}

/// Mean NDCG@K on `split.valid`, ranking everything except training items.
/// Users without validation items are skipped; returns 0 if none remain.
pub fn validation_ndcg(reps: &EmbeddingState, split: &Split, k: usize) -> f64 {
    let users: Vec<usize> = (0..reps.num_users())
        .filter(|&u| !split.valid.items_of(u).is_empty())
        .collect();
    if users.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for block in users.chunks(USER_BLOCK) {
        let scores = score_block(block, reps);
        for (row, &u) in block.iter().enumerate() {
            let top = top_k_items(scores.row(row), split.train.items_of(u), k);
            sum += ndcg_at_k(&top, split.valid.items_of(u), k);
        }
    }
    sum / users.len() as f64
}

/// Full test-set report: accuracy and DP per cutoff, PRU, exposure and gaps.
pub fn evaluate(
    reps: &EmbeddingState,
    split: &Split,
    groups: &GroupAssignment,
    popularity: &PopularityTable,
    ks: &[usize],
    seed: u64,
) -> Result<MetricReport> {
    let lists = rank_all_users(reps, split);
    let test = &split.test;
    let evaluable: Vec<usize> = (0..reps.num_users())
        .filter(|&u| !test.items_of(u).is_empty())
        .collect();

    let mut cutoffs = Vec::with_capacity(ks.len());
    for &k in ks {
        let (mut pop_hr, mut pop_ndcg, mut tail_hr, mut tail_ndcg) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for &u in &evaluable {
            let top = lists[u].top(k);
            let hr = hr_at_k(top, test.items_of(u), k);
            let ndcg = ndcg_at_k(top, test.items_of(u), k);
            if groups.is_popular_user(u) {
                pop_hr.push(hr);
                pop_ndcg.push(ndcg);
            } else {
                tail_hr.push(hr);
                tail_ndcg.push(ndcg);
            }
        }
        let mean = |xs: &[f64]| if xs.is_empty() { 0.0 } else { xs.iter().sum::<f64>() / xs.len() as f64 };
        let total = |a: &[f64], b: &[f64]| {
            let n = a.len() + b.len();
            if n == 0 {
                0.0
            } else {
                (a.iter().sum::<f64>() + b.iter().sum::<f64>()) / n as f64
            }
        };
        cutoffs.push(CutoffReport {
            k,
            hr: total(&pop_hr, &tail_hr),
            ndcg: total(&pop_ndcg, &tail_ndcg),
            dp: dp_at_k(&pop_ndcg, &tail_ndcg).ok(),
            popular_users: GroupAccuracy {
                users: pop_hr.len(),
                hr: mean(&pop_hr),
                ndcg: mean(&pop_ndcg),
            },
            tail_users: GroupAccuracy {
                users: tail_hr.len(),
                hr: mean(&tail_hr),
                ndcg: mean(&tail_ndcg),
            },
            group_exposure: group_exposure(lists.iter().map(|l| l.top(k)), groups, test),
        });
    }

    let per_user: Vec<(Vec<f64>, Vec<f64>)> = evaluable
        .iter()
        .map(|&u| {
            let positions = lists[u].positions(reps.num_items());
            let items = test.items_of(u);
            (
                items.iter().map(|&i| popularity.item_pop[i] as f64).collect(),
                items.iter().map(|&i| positions[i] as f64).collect(),
            )
        })
        .collect();
    let pru_result = pru(per_user.iter().map(|(p, r)| (p.as_slice(), r.as_slice()))).ok();

    Ok(MetricReport {
        num_users: reps.num_users(),
        num_items: reps.num_items(),
        evaluated_users: evaluable.len(),
        skipped_users_no_test: reps.num_users() - evaluable.len(),
        cutoffs,
        pru: pru_result.map(|p| p.value),
        pru_evaluated_users: pru_result.map_or(0, |p| p.evaluated_users),
        pru_skipped_users: pru_result.map_or(evaluable.len(), |p| p.skipped_users),
        loss_gap: loss_gap(&split.train, groups, reps, seed).ok(),
        score_gap: mean_score_gap(groups, reps).ok(),
        conventions: Conventions::default(),
    })
}
