//! Negative sampling and mini-batch assembly.

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::dataset::{GroupAssignment, InteractionSet};
use crate::error::{Error, Result};
use crate::losses::AlignSample;

/// One mini-batch: `(user, positive, negative)` triples plus the index sets
/// used by the alignment and uniformity terms.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub triples: Vec<(usize, usize, usize)>,
    pub align: AlignSample,
    /// Distinct users of `triples`, ascending.
    pub uniform_users: Vec<usize>,
    /// Distinct positive and negative items of `triples`, ascending.
    pub uniform_items: Vec<usize>,
}

impl TrainBatch {
    pub fn from_triples(triples: Vec<(usize, usize, usize)>, align: AlignSample) -> Self {
        let mut users: Vec<usize> = triples.iter().map(|t| t.0).collect();
        users.sort_unstable();
        users.dedup();
        let mut items: Vec<usize> = triples.iter().flat_map(|t| [t.1, t.2]).collect();
        items.sort_unstable();
        items.dedup();
        TrainBatch {
            triples,
            align,
            uniform_users: users,
            uniform_items: items,
        }
    }
}

/// Uniform draw from the items `u` has not interacted with in `train`.
pub fn sample_negative<R: Rng + ?Sized>(u: usize, train: &InteractionSet, rng: &mut R) -> Result<usize> {
    let n = train.num_items();
    if train.items_of(u).len() >= n {
        return Err(Error::Unsampleable(u));
    }
    loop {
        let i = rng.random_range(0..n);
        if !train.contains(u, i) {
            return Ok(i);
        }
    }
}

/// Up to `cap` distinct members of `pool`, uniformly without replacement, ascending.
pub fn sample_subset<R: Rng + ?Sized>(pool: &[usize], cap: usize, rng: &mut R) -> Vec<usize> {
    if pool.len() <= cap {
        return pool.to_vec();
    }
    let mut picked: Vec<usize> = index::sample(rng, pool.len(), cap)
        .into_iter()
        .map(|k| pool[k])
        .collect();
    picked.sort_unstable();
    picked
}

/// Group membership lists, computed once per training run.
#[derive(Debug, Clone)]
pub struct GroupPools {
    pub popular_users: Vec<usize>,
    pub tail_users: Vec<usize>,
    pub popular_items: Vec<usize>,
    pub tail_items: Vec<usize>,
}

impl GroupPools {
    pub fn new(groups: &GroupAssignment) -> Self {
        GroupPools {
            popular_users: groups.popular_users(),
            tail_users: groups.tail_users(),
            popular_items: groups.popular_items(),
            tail_items: groups.tail_items(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, cap: usize, rng: &mut R) -> AlignSample {
        AlignSample {
            popular_users: sample_subset(&self.popular_users, cap, rng),
            tail_users: sample_subset(&self.tail_users, cap, rng),
            popular_items: sample_subset(&self.popular_items, cap, rng),
            tail_items: sample_subset(&self.tail_items, cap, rng),
        }
    }
}

/// Shuffles the training pairs once, cuts them into chunks of `batch_size`
/// and pairs every positive with `neg_per_pos` sampled negatives.
pub fn make_batches<R: Rng + ?Sized>(
    train: &InteractionSet,
    pools: &GroupPools,
    batch_size: usize,
    neg_per_pos: usize,
    align_cap: usize,
    rng: &mut R,
) -> Result<Vec<TrainBatch>> {
    assert!(batch_size >= 1);
    let mut pairs: Vec<(usize, usize)> = train.pairs().collect();
    pairs.shuffle(rng);
    let mut batches = Vec::with_capacity(pairs.len().div_ceil(batch_size));
    for chunk in pairs.chunks(batch_size) {
        let mut triples = Vec::with_capacity(chunk.len() * neg_per_pos);
        for &(u, i) in chunk {
            for _ in 0..neg_per_pos {
                triples.push((u, i, sample_negative(u, train, rng)?));
            }
        }
        let align = pools.sample(align_cap, rng);
        batches.push(TrainBatch::from_triples(triples, align));
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{assign_groups, compute_popularity};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forced_negative() {
        let train = InteractionSet::from_pairs(1, 3, [(0, 0), (0, 1)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            assert_eq!(sample_negative(0, &train, &mut rng).unwrap(), 2);
        }
    }

    #[test]
    fn saturated_user_is_unsampleable() {
        let train = InteractionSet::from_pairs(1, 2, [(0, 0), (0, 1)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            sample_negative(0, &train, &mut rng),
            Err(Error::Unsampleable(0))
        ));
    }

    #[test]
    fn negatives_are_uniform_over_complement() {
        // user 0 owns items {0, 3, 7} out of 10 → 7 admissible items
        let train = InteractionSet::from_pairs(1, 10, [(0, 0), (0, 3), (0, 7)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = 100_000;
        let mut counts = [0usize; 10];
        for _ in 0..draws {
            counts[sample_negative(0, &train, &mut rng).unwrap()] += 1;
        }
        assert_eq!(counts[0] + counts[3] + counts[7], 0);
        let expected = draws as f64 / 7.0;
        let chi2: f64 = counts
            .iter()
            .enumerate()
            .filter(|(i, _)| ![0, 3, 7].contains(i))
            .map(|(_, &c)| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 6 degrees of freedom: P(χ² > 16.81) = 0.01
        assert!(chi2 < 16.81, "chi2 = {chi2}");
    }

    fn toy() -> (InteractionSet, GroupPools) {
        let pairs = (0..100).flat_map(|u| (0..50).map(move |k| (u, (u * 13 + k * 7) % 120)));
        let train = InteractionSet::from_pairs(100, 120, pairs).unwrap();
        let groups = assign_groups(&compute_popularity(&train), 0.2).unwrap();
        (train, GroupPools::new(&groups))
    }

    #[test]
    fn batch_sizes_follow_chunking() {
        let (train, pools) = toy();
        assert_eq!(train.len(), 5000);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batches = make_batches(&train, &pools, 2048, 1, 512, &mut rng).unwrap();
        let sizes: Vec<usize> = batches.iter().map(|b| b.triples.len()).collect();
        assert_eq!(sizes, vec![2048, 2048, 904]);
    }

    #[test]
    fn batches_are_seeded_and_valid() {
        let (train, pools) = toy();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            make_batches(&train, &pools, 700, 1, 10, &mut rng).unwrap()
        };
        let a = run(9);
        assert_eq!(a, run(9));
        assert_ne!(a, run(10));
        for b in &a {
            for &(u, i, j) in &b.triples {
                assert!(train.contains(u, i));
                assert!(!train.contains(u, j));
            }
            b.align.validate().unwrap();
            assert_eq!(b.align.tail_users.len(), 10);
            assert_eq!(b.align.popular_users.len(), 10);
            for set in [&b.uniform_users, &b.uniform_items, &b.align.tail_items] {
                assert!(set.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }

    #[test]
    fn small_groups_are_taken_whole() {
        let pool = vec![4, 8, 15];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_subset(&pool, 512, &mut rng), pool);
        assert_eq!(sample_subset(&pool, 2, &mut rng).len(), 2);
    }
}
