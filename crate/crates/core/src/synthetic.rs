//! Synthetic implicit-feedback generator with power-law item popularity,
//! skewed user activity and latent topic preferences.
//!
//! Each item gets a Zipf weight `(r+1)^-s` from a random popularity rank `r`
//! and one of `num_topics` topics. Each user prefers `topics_per_user` topics
//! and draws `n_u` distinct items with probability proportional to
//! `weight · (affinity if the topic is preferred else 1)`.

use rand::distr::weighted::WeightedIndex;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{parse_interactions, InteractionSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_users: usize,
    pub num_items: usize,
    /// Target mean interactions per user.
    pub mean_activity: f64,
    pub min_activity: usize,
    /// Log-normal shape of per-user activity above the minimum.
    pub activity_skew: f64,
    pub zipf_exponent: f64,
    pub num_topics: usize,
    pub topics_per_user: usize,
    pub topic_affinity: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_users: 2000,
            num_items: 1500,
            mean_activity: 20.0,
            min_activity: 8,
            activity_skew: 0.8,
            zipf_exponent: 0.6,
            num_topics: 20,
            topics_per_user: 2,
            topic_affinity: 30.0,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        if self.num_users == 0 || self.num_items == 0 || self.num_topics == 0 {
            return Err(Error::Config("synthetic sizes must be positive".into()));
        }
        if self.mean_activity <= self.min_activity as f64 {
            return Err(Error::Config("mean_activity must exceed min_activity".into()));
        }
        if self.topics_per_user == 0 || self.topics_per_user > self.num_topics {
            return Err(Error::Config("topics_per_user must lie in 1..=num_topics".into()));
        }
        if !(self.activity_skew > 0.0 && self.zipf_exponent >= 0.0 && self.topic_affinity >= 1.0) {
            return Err(Error::Config("invalid synthetic shape parameters".into()));
        }
        Ok(())
    }
}

/// Generated interactions as `(user, item)` pairs over dense indices.
pub fn generate_pairs(cfg: &SyntheticConfig) -> Result<Vec<(usize, usize)>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut ranks: Vec<usize> = (0..cfg.num_items).collect();
    ranks.shuffle(&mut rng);
    let weights: Vec<f64> = ranks
        .iter()
        .map(|&r| ((r + 1) as f64).powf(-cfg.zipf_exponent))
        .collect();
    let item_topic: Vec<usize> = (0..cfg.num_items)
        .map(|_| rng.random_range(0..cfg.num_topics))
        .collect();

    let sigma = cfg.activity_skew;
    let excess = cfg.mean_activity - cfg.min_activity as f64;
    let activity = LogNormal::new(excess.ln() - 0.5 * sigma * sigma, sigma)
        .map_err(|e| Error::Config(format!("activity distribution: {e}")))?;
    let max_activity = (cfg.num_items / 4).max(cfg.min_activity);

    let topics: Vec<usize> = (0..cfg.num_topics).collect();
    let mut pairs = Vec::new();
    let mut taken = vec![false; cfg.num_items];
    for u in 0..cfg.num_users {
        let n_u = (cfg.min_activity + activity.sample(&mut rng).round() as usize).min(max_activity);
        let liked: Vec<usize> = topics
            .choose_multiple(&mut rng, cfg.topics_per_user)
            .copied()
            .collect();
        let user_weights: Vec<f64> = weights
            .iter()
            .zip(&item_topic)
            .map(|(&w, t)| if liked.contains(t) { w * cfg.topic_affinity } else { w })
            .collect();
        let dist = WeightedIndex::new(&user_weights)
            .map_err(|e| Error::Config(format!("item weights: {e}")))?;
        let mut chosen = Vec::with_capacity(n_u);
        let mut attempts = 0;
        while chosen.len() < n_u && attempts < 50 * n_u {
            attempts += 1;
            let i = dist.sample(&mut rng);
            if !taken[i] {
                taken[i] = true;
                chosen.push(i);
            }
        }
        for &i in &chosen {
            taken[i] = false;
            pairs.push((u, i));
        }
    }
    Ok(pairs)
}

/// Generated data rendered as the tab-separated interaction format.
pub fn generate_tsv(cfg: &SyntheticConfig) -> Result<String> {
    let mut out = String::from("# synthetic implicit feedback\n");
    for (u, i) in generate_pairs(cfg)? {
        out.push_str(&format!("u{u}\ti{i}\n"));
    }
    Ok(out)
}

/// Generated data as an interaction set with raw IDs `u<k>` / `i<k>`.
pub fn generate(cfg: &SyntheticConfig) -> Result<InteractionSet> {
    parse_interactions(&generate_tsv(cfg)?, std::path::Path::new("<synthetic>"))
}
