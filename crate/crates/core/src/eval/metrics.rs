//! Accuracy and bias metrics over ranked lists.

use crate::error::{Error, Result};

/// `|top-K ∩ test| / |test|`. `ranked` is a candidate list in rank order;
/// `test` must be non-empty.
pub fn hr_at_k(ranked: &[usize], test: &[usize], k: usize) -> f64 {
    assert!(!test.is_empty(), "hit ratio needs at least one test item");
    let hits = ranked.iter().take(k).filter(|i| test.contains(i)).count();
    hits as f64 / test.len() as f64
}

/// Binary-relevance NDCG@K with `1/log2(p+1)` discounts.
pub fn ndcg_at_k(ranked: &[usize], test: &[usize], k: usize) -> f64 {
    assert!(!test.is_empty(), "NDCG needs at least one test item");
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| test.contains(i))
        .map(|(p, _)| discount(p + 1))
        .sum();
    let idcg: f64 = (1..=k.min(test.len())).map(discount).sum();
    dcg / idcg
}

#[inline]
fn discount(position: usize) -> f64 {
    1.0 / ((position + 1) as f64).log2()
}

/// 1-based ranks, ties sharing the mean of the positions they span.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let mean = (start + 1 + end) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = mean;
        }
        start = end;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("correlation of a constant vector".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Shape(format!(
            "spearman inputs have lengths {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::Undefined("spearman needs at least two pairs".into()));
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruResult {
    pub value: f64,
    pub evaluated_users: usize,
    pub skipped_users: usize,
}

/// Negated mean Spearman correlation between test-item popularity and rank
/// position (1 = best) over users where it is defined.
pub fn pru<'a>(per_user: impl IntoIterator<Item = (&'a [f64], &'a [f64])>) -> Result<PruResult> {
    let mut sum = 0.0;
    let (mut evaluated, mut skipped) = (0, 0);
    for (pops, ranks) in per_user {
        match spearman(pops, ranks) {
            Ok(src) => {
                sum -= src;
                evaluated += 1;
            }
            Err(_) => skipped += 1,
        }
    }
    if evaluated == 0 {
        return Err(Error::Undefined("no user has a defined popularity-rank correlation".into()));
    }
    Ok(PruResult {
        value: sum / evaluated as f64,
        evaluated_users: evaluated,
        skipped_users: skipped,
    })
}

pub const ACCURACY_BINS: usize = 20;

/// Normalized histogram of values in `[0, 1]` over `bins` equal-width bins;
/// the last bin is closed on the right.
pub fn accuracy_histogram(values: &[f64], bins: usize) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Undefined("histogram of an empty group".into()));
    }
    let mut hist = vec![0.0; bins];
    for &v in values {
        let b = ((v.clamp(0.0, 1.0) * bins as f64).floor() as usize).min(bins - 1);
        hist[b] += 1.0;
    }
    let n = values.len() as f64;
    hist.iter_mut().for_each(|h| *h /= n);
    Ok(hist)
}

fn check_distribution(p: &[f64], name: &str) -> Result<()> {
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::Domain(format!("{name} has a negative or non-finite entry")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

/// Jensen-Shannon divergence in bits, so the result lies in `[0, 1]`.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Domain(format!(
            "distributions have lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    let kl_to_mid = |a: &[f64]| -> f64 {
        a.iter()
            .zip(p.iter().zip(q))
            .filter(|(&ai, _)| ai > 0.0)
            .map(|(&ai, (&pi, &qi))| ai * (ai / (0.5 * (pi + qi))).log2())
            .sum()
    };
    Ok((0.5 * kl_to_mid(p) + 0.5 * kl_to_mid(q)).clamp(0.0, 1.0))
}

/// JSD between the per-user accuracy histograms of two user groups.
pub fn dp_at_k(popular_acc: &[f64], tail_acc: &[f64]) -> Result<f64> {
    if popular_acc.is_empty() || tail_acc.is_empty() {
        return Err(Error::Undefined("a user group has no evaluable users".into()));
    }
    jsd(
        &accuracy_histogram(popular_acc, ACCURACY_BINS)?,
        &accuracy_histogram(tail_acc, ACCURACY_BINS)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hit_ratio_examples() {
        let ranked: Vec<usize> = (0..30).collect();
        assert_eq!(hr_at_k(&ranked, &[1, 5, 25, 28], 20), 0.5);
        assert_eq!(hr_at_k(&ranked, &[21, 22], 20), 0.0);
        assert_eq!(hr_at_k(&ranked, &[0], 20), 1.0);
    }

    #[test]
    fn ndcg_examples() {
        let ranked = [7, 3, 9, 1];
        assert_eq!(ndcg_at_k(&ranked, &[7], 20), 1.0);
        let v = ndcg_at_k(&ranked, &[7, 9], 20);
        let expected = 1.5 / (1.0 + 1.0 / 3f64.log2());
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.91972).abs() < 1e-5);
        assert_eq!(ndcg_at_k(&ranked, &[42], 20), 0.0);
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        let tied = spearman(&[1.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((tied - 1.5 / 3f64.sqrt()).abs() < 1e-12);
        assert!(matches!(
            spearman(&[1.0, 1.0], &[1.0, 2.0]),
            Err(Error::Undefined(_))
        ));
    }

    #[test]
    fn average_ranks_share_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn pru_sign_convention() {
        let pops = [10.0, 5.0, 1.0];
        let best_first = [1.0, 2.0, 3.0];
        let r = pru([(&pops[..], &best_first[..])]).unwrap();
        assert!((r.value - 1.0).abs() < 1e-15);
        let worst_first = [3.0, 2.0, 1.0];
        let r = pru([(&pops[..], &worst_first[..])]).unwrap();
        assert!((r.value + 1.0).abs() < 1e-15);
    }

    #[test]
    fn pru_skips_degenerate_users() {
        let pops = [4.0, 4.0];
        let ranks = [1.0, 2.0];
        assert!(pru([(&pops[..], &ranks[..])]).is_err());
        let good = [9.0, 1.0];
        let r = pru([(&pops[..], &ranks[..]), (&good[..], &ranks[..])]).unwrap();
        assert_eq!((r.evaluated_users, r.skipped_users), (1, 1));
    }

    #[test]
    fn histogram_examples() {
        let h = accuracy_histogram(&[0.0, 0.0, 0.0], 20).unwrap();
        assert_eq!(h[0], 1.0);
        let h = accuracy_histogram(&[0.0, 1.0], 20).unwrap();
        assert_eq!((h[0], h[19]), (0.5, 0.5));
        let h = accuracy_histogram(&[0.13, 0.5, 0.77, 0.99, 0.05, 0.3, 1.0], 20).unwrap();
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jsd_examples() {
        let p = [0.2, 0.3, 0.5];
        assert!(jsd(&p, &p).unwrap().abs() < 1e-12);
        assert!((jsd(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-12);
        let half = jsd(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        let expected = 0.5 * (0.5 * (0.5f64 / 0.75).log2() + 0.5 * (0.5f64 / 0.25).log2())
            + 0.5 * (1.0f64 / 0.75).log2();
        assert!((half - expected).abs() < 1e-15);
        assert!((half - 0.31128).abs() < 1e-5);
        assert!(matches!(jsd(&[0.5, 0.6], &[0.5, 0.5]), Err(Error::Domain(_))));
        assert!(matches!(jsd(&[1.0], &[0.5, 0.5]), Err(Error::Domain(_))));
    }

    #[test]
    fn dp_examples() {
        assert_eq!(dp_at_k(&[0.2, 0.9], &[0.9, 0.2]).unwrap(), 0.0);
        assert!((dp_at_k(&[0.0, 0.0], &[1.0, 1.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(dp_at_k(&[], &[1.0]).is_err());
    }
}
