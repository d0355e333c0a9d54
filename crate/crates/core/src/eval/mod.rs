//! Top-K evaluation: ranking, accuracy (HR, NDCG), popularity bias (PRU),
//! user-group parity (DP) and representation diagnostics.

pub mod diagnostics;
pub mod metrics;
pub mod ranking;
pub mod report;

pub use diagnostics::{
    angular_density, group_exposure, loss_gap, mean_score_gap, score_gap, AngularDensity,
    GroupExposure, LossGap,
};
pub use metrics::{
    accuracy_histogram, average_ranks, dp_at_k, hr_at_k, jsd, ndcg_at_k, pru, spearman, PruResult,
};
pub use ranking::{rank_items, top_k_items, RankedList};
pub use report::{evaluate, rank_all_users, validation_ndcg, CutoffReport, MetricReport};
