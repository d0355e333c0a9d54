use serde::{Deserialize, Serialize};

/// A user's candidates in descending score order, ties by ascending item index.
/// Items the user trained on are never candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub user: usize,
    pub items: Vec<usize>,
}

impl RankedList {
    pub fn top(&self, k: usize) -> &[usize] {
        &self.items[..k.min(self.items.len())]
    }

    /// 1-based position of every candidate, indexed by item (`0` = not a candidate).
    pub fn positions(&self, num_items: usize) -> Vec<usize> {
        let mut pos = vec![0; num_items];
        for (p, &i) in self.items.iter().enumerate() {
            pos[i] = p + 1;
        }
        pos
    }
}

#[inline]
fn before(scores: &[f64], a: usize, b: usize) -> std::cmp::Ordering {
    scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

/// Full ranking of all non-training items. `train_items` must be ascending.
pub fn rank_items(user: usize, scores: &[f64], train_items: &[usize]) -> RankedList {
    let mut items = candidates(scores.len(), train_items);
    items.sort_unstable_by(|&a, &b| before(scores, a, b));
    RankedList { user, items }
}

/// The first `k` entries of [`rank_items`] without sorting the whole list.
pub fn top_k_items(scores: &[f64], train_items: &[usize], k: usize) -> Vec<usize> {
    let mut items = candidates(scores.len(), train_items);
    if k == 0 {
        return Vec::new();
    }
    if items.len() > k {
        items.select_nth_unstable_by(k - 1, |&a, &b| before(scores, a, b));
        items.truncate(k);
    }
    items.sort_unstable_by(|&a, &b| before(scores, a, b));
    items
}

fn candidates(num_items: usize, train_items: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(num_items.saturating_sub(train_items.len()));
    let mut skip = train_items.iter().peekable();
    for i in 0..num_items {
        if skip.peek() == Some(&&i) {
            skip.next();
            continue;
        }
        out.push(i);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orders_by_score() {
        assert_eq!(rank_items(0, &[0.1, 0.9, 0.5], &[]).items, vec![1, 2, 0]);
    }

    #[test]
    fn ties_go_to_lower_index() {
        assert_eq!(rank_items(0, &[0.3, 0.3, 0.3], &[]).items, vec![0, 1, 2]);
    }

    #[test]
    fn training_items_are_excluded() {
        let list = rank_items(3, &[0.1, 0.9, 0.5, 0.7], &[1]);
        assert_eq!(list.items, vec![3, 2, 0]);
        assert_eq!(list.positions(4), vec![3, 0, 2, 1]);
    }

    #[test]
    fn top_k_agrees_with_full_ranking() {
        let scores: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64 * 0.1).collect();
        let train = [3, 8, 20];
        let full = rank_items(0, &scores, &train);
        for k in [0, 1, 5, 20, 47, 60] {
            assert_eq!(top_k_items(&scores, &train, k), full.top(k));
        }
    }
}
