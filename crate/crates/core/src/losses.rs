//! Objective terms with closed-form gradients: pairwise BPR, MMD group
//! alignment, Gaussian-potential uniformity and L2 weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{squared_distance, Matrix};

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-ln σ(s_pos - s_neg)`.
#[inline]
pub fn bpr_term(s_pos: f64, s_neg: f64) -> f64 {
    softplus(s_neg - s_pos)
}

/// Coefficient `1 - σ(s_pos - s_neg)` shared by all three BPR gradients.
#[inline]
pub fn bpr_coefficient(s_pos: f64, s_neg: f64) -> f64 {
    sigmoid(s_neg - s_pos)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BprGradients {
    pub user: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

/// Gradients of [`bpr_term`] with respect to `z_u`, `h_i` and `h_{i-}`.
pub fn bpr_gradients(z_u: &[f64], h_pos: &[f64], h_neg: &[f64]) -> BprGradients {
    assert!(z_u.len() == h_pos.len() && h_pos.len() == h_neg.len());
    let s_pos = crate::matrix::dot(z_u, h_pos);
    let s_neg = crate::matrix::dot(z_u, h_neg);
    let c = bpr_coefficient(s_pos, s_neg);
    BprGradients {
        user: h_pos
            .iter()
            .zip(h_neg)
            .map(|(p, n)| -c * (p - n))
            .collect(),
        positive: z_u.iter().map(|z| -c * z).collect(),
        negative: z_u.iter().map(|z| c * z).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "rule", content = "gamma")]
pub enum Bandwidth {
    /// `γ = 1 / median pairwise squared distance` of the pooled sample, per step.
    Median,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub bandwidth: Bandwidth,
    /// Gaussian-potential temperature of the uniformity term.
    pub t: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            bandwidth: Bandwidth::Median,
            t: 2.0,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if let Bandwidth::Fixed(g) = self.bandwidth {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("gamma must be positive, got {g}")));
            }
        }
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(Error::Config(format!("t must be positive, got {}", self.t)));
        }
        Ok(())
    }

    /// Bandwidth for a pooled sample; a degenerate median falls back to `γ = 1`.
    pub fn gamma_for(&self, pooled: &Matrix) -> f64 {
        match self.bandwidth {
            Bandwidth::Fixed(g) => g,
            Bandwidth::Median => median_heuristic_gamma(pooled).unwrap_or(1.0),
        }
    }
}

/// `1 / median` of the squared distances over distinct unordered pairs.
pub fn median_heuristic_gamma(points: &Matrix) -> Result<f64> {
    let n = points.rows();
    if n < 2 {
        return Err(Error::InsufficientPairs(n));
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for a in 0..n {
        for b in a + 1..n {
            dists.push(squared_distance(points.row(a), points.row(b)));
        }
    }
    let median = median_in_place(&mut dists);
    if median <= 0.0 {
        return Err(Error::DegenerateBandwidth);
    }
    Ok(1.0 / median)
}

pub(crate) fn median_in_place(xs: &mut [f64]) -> f64 {
    let len = xs.len();
    let mid = len / 2;
    let (_, upper, _) = xs.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if len % 2 == 1 {
        upper
    } else {
        let lower = xs[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// `‖a - b‖²` for every row pair, via the Gram expansion; clamped at zero.
fn pairwise_sq_dists(a: &Matrix, b: &Matrix) -> Matrix {
    let mut g = a.matmul_transposed(b);
    let a_norms: Vec<f64> = a.iter_rows().map(|r| r.iter().map(|x| x * x).sum()).collect();
    let b_norms: Vec<f64> = b.iter_rows().map(|r| r.iter().map(|x| x * x).sum()).collect();
    for (r, &na) in a_norms.iter().enumerate() {
        for (v, &nb) in g.row_mut(r).iter_mut().zip(&b_norms) {
            *v = (na + nb - 2.0 * *v).max(0.0);
        }
    }
    g
}

fn rbf_block(a: &Matrix, b: &Matrix, gamma: f64) -> Matrix {
    let mut k = pairwise_sq_dists(a, b);
    k.as_mut_slice()
        .iter_mut()
        .for_each(|d| *d = (-gamma * *d).exp());
    k
}

/// Squared MMD between the empirical kernel mean embeddings of `x` and `y`
/// under `k(a, b) = exp(-γ‖a-b‖²)`; diagonal terms included.
pub fn mmd_sq(x: &Matrix, y: &Matrix, gamma: f64) -> f64 {
    mmd_sq_with_grad(x, y, gamma, false).0
}

/// [`mmd_sq`] and its gradient with respect to the rows of `y`.
pub fn mmd_sq_grad_y(x: &Matrix, y: &Matrix, gamma: f64) -> (f64, Matrix) {
    let (v, g) = mmd_sq_with_grad(x, y, gamma, true);
    (v, g.expect("gradient requested"))
}

fn mmd_sq_with_grad(x: &Matrix, y: &Matrix, gamma: f64, want_grad: bool) -> (f64, Option<Matrix>) {
    assert!(x.rows() >= 1 && y.rows() >= 1, "mmd needs non-empty samples");
    assert_eq!(x.cols(), y.cols());
    let n = x.rows() as f64;
    let m = y.rows() as f64;
    let kxx = rbf_block(x, x, gamma);
    let kyx = rbf_block(y, x, gamma);
    let kyy = rbf_block(y, y, gamma);
    let sum = |k: &Matrix| k.as_slice().iter().sum::<f64>();
    let value = sum(&kxx) / (n * n) - 2.0 * sum(&kyx) / (n * m) + sum(&kyy) / (m * m);
    if !want_grad {
        return (value, None);
    }

    // dL/dy_j = 4γ/(nm) Σ_i k(y_j,x_i)(y_j - x_i) - 4γ/m² Σ_j' k(y_j,y_j')(y_j - y_j')
    let kyx_x = kyx.matmul(x);
    let kyy_y = kyy.matmul(y);
    let cross = 4.0 * gamma / (n * m);
    let within = 4.0 * gamma / (m * m);
    let mut grad = Matrix::zeros(y.rows(), y.cols());
    for j in 0..y.rows() {
        let rs_x: f64 = kyx.row(j).iter().sum();
        let rs_y: f64 = kyy.row(j).iter().sum();
        let yj = y.row(j);
        let (ax, ay) = (kyx_x.row(j), kyy_y.row(j));
        for (c, g) in grad.row_mut(j).iter_mut().enumerate() {
            *g = cross * (rs_x * yj[c] - ax[c]) - within * (rs_y * yj[c] - ay[c]);
        }
    }
    (value, Some(grad))
}

/// Back-propagates a gradient on `v / ‖v‖` to `v`, row by row. Zero rows get zero.
pub fn normalize_backward(raw: &Matrix, unit: &Matrix, grad_unit: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(raw.rows(), raw.cols());
    for r in 0..raw.rows() {
        let norm = raw.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let (u, g) = (unit.row(r), grad_unit.row(r));
        let proj = crate::matrix::dot(u, g);
        for ((o, &ui), &gi) in out.row_mut(r).iter_mut().zip(u).zip(g) {
            *o = (gi - ui * proj) / norm;
        }
    }
    out
}

/// One side of the alignment term: MMD² between fixed (already normalized)
/// popular-group targets and the normalized tail rows, with the gradient on
/// the raw tail rows.
pub fn alignment_side(targets: &Matrix, tail_raw: &Matrix, gamma: f64) -> (f64, Matrix) {
    let tail = crate::embeddings::l2_normalize_rows(tail_raw);
    let (value, grad_unit) = mmd_sq_grad_y(targets, &tail, gamma);
    (value, normalize_backward(tail_raw, &tail, &grad_unit))
}

/// Index sets drawn for one alignment evaluation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlignSample {
    pub popular_users: Vec<usize>,
    pub tail_users: Vec<usize>,
    pub popular_items: Vec<usize>,
    pub tail_items: Vec<usize>,
}

impl AlignSample {
    pub fn validate(&self) -> Result<()> {
        for (name, set) in [
            ("popular users", &self.popular_users),
            ("tail users", &self.tail_users),
            ("popular items", &self.popular_items),
            ("tail items", &self.tail_items),
        ] {
            if set.is_empty() {
                return Err(Error::Sampling(format!("{name} subset is empty")));
            }
        }
        Ok(())
    }
}

/// Result of the alignment term. Gradients are with respect to the final
/// representations and are nonzero only on sampled tail rows.
#[derive(Debug, Clone)]
pub struct AlignmentTerm {
    pub value: f64,
    pub user_mmd: f64,
    pub item_mmd: f64,
    pub user_gamma: f64,
    pub item_gamma: f64,
    pub grad_user: Matrix,
    pub grad_item: Matrix,
}

/// Bandwidths for both sides, chosen on the pooled popular ∪ tail sample.
pub fn alignment_gammas(
    user_reps: &Matrix,
    item_reps: &Matrix,
    sample: &AlignSample,
    cfg: &KernelConfig,
) -> (f64, f64) {
    let pooled = |reps: &Matrix, a: &[usize], b: &[usize]| {
        let idx: Vec<usize> = a.iter().chain(b).copied().collect();
        crate::embeddings::l2_normalize_rows(&reps.gather(&idx))
    };
    (
        cfg.gamma_for(&pooled(user_reps, &sample.popular_users, &sample.tail_users)),
        cfg.gamma_for(&pooled(item_reps, &sample.popular_items, &sample.tail_items)),
    )
}

/// `½(MMD²_user + MMD²_item)` on row-normalized representations, with the
/// popular groups held fixed.
pub fn alignment_loss(
    user_reps: &Matrix,
    item_reps: &Matrix,
    sample: &AlignSample,
    cfg: &KernelConfig,
) -> Result<AlignmentTerm> {
    sample.validate()?;
    let (user_gamma, item_gamma) = alignment_gammas(user_reps, item_reps, sample, cfg);
    let user_targets = crate::embeddings::l2_normalize_rows(&user_reps.gather(&sample.popular_users));
    let item_targets = crate::embeddings::l2_normalize_rows(&item_reps.gather(&sample.popular_items));
    let (user_mmd, gu) = alignment_side(&user_targets, &user_reps.gather(&sample.tail_users), user_gamma);
    let (item_mmd, gi) = alignment_side(&item_targets, &item_reps.gather(&sample.tail_items), item_gamma);

    let mut grad_user = Matrix::zeros(user_reps.rows(), user_reps.cols());
    scatter_add(&mut grad_user, &sample.tail_users, &gu, 0.5);
    let mut grad_item = Matrix::zeros(item_reps.rows(), item_reps.cols());
    scatter_add(&mut grad_item, &sample.tail_items, &gi, 0.5);
    Ok(AlignmentTerm {
        value: 0.5 * (user_mmd + item_mmd),
        user_mmd,
        item_mmd,
        user_gamma,
        item_gamma,
        grad_user,
        grad_item,
    })
}

/// `grad[rows[k]] += scale · block[k]`.
pub fn scatter_add(grad: &mut Matrix, rows: &[usize], block: &Matrix, scale: f64) {
    for (k, &r) in rows.iter().enumerate() {
        for (g, b) in grad.row_mut(r).iter_mut().zip(block.row(k)) {
            *g += scale * b;
        }
    }
}

/// `log` of the mean Gaussian potential `exp(-t‖a-b‖²)` over distinct unordered
/// pairs of rows, with its gradient on the rows.
pub fn uniformity_side(points: &Matrix, t: f64) -> Result<(f64, Matrix)> {
    let n = points.rows();
    if n < 2 {
        return Err(Error::InsufficientPairs(n));
    }
    let mut w = pairwise_sq_dists(points, points);
    for a in 0..n {
        let row = w.row_mut(a);
        for (b, v) in row.iter_mut().enumerate() {
            *v = if a == b { 0.0 } else { (-t * *v).exp() };
        }
    }
    let row_sums: Vec<f64> = w.iter_rows().map(|r| r.iter().sum()).collect();
    let pair_sum = 0.5 * row_sums.iter().sum::<f64>();
    let pairs = (n * (n - 1) / 2) as f64;
    let value = (pair_sum / pairs).ln();

    let wf = w.matmul(points);
    let scale = -2.0 * t / pair_sum;
    let mut grad = Matrix::zeros(n, points.cols());
    for a in 0..n {
        let (p, q) = (points.row(a), wf.row(a));
        for ((g, &pa), &qa) in grad.row_mut(a).iter_mut().zip(p).zip(q) {
            *g = scale * (row_sums[a] * pa - qa);
        }
    }
    Ok((value, grad))
}

/// [`uniformity_side`] applied to normalized copies of raw rows, with the
/// gradient pulled back to the raw rows.
pub fn uniformity_side_raw(raw: &Matrix, t: f64) -> Result<(f64, Matrix)> {
    let unit = crate::embeddings::l2_normalize_rows(raw);
    let (value, g) = uniformity_side(&unit, t)?;
    Ok((value, normalize_backward(raw, &unit, &g)))
}

#[derive(Debug, Clone)]
pub struct UniformityTerm {
    pub value: f64,
    pub user: f64,
    pub item: f64,
    pub grad_user: Matrix,
    pub grad_item: Matrix,
}

/// `½(user side + item side)` on unit-norm rows; gradients are on those rows.
pub fn uniformity_loss(user_reps: &Matrix, item_reps: &Matrix, t: f64) -> Result<UniformityTerm> {
    let (user, mut grad_user) = uniformity_side(user_reps, t)?;
    let (item, mut grad_item) = uniformity_side(item_reps, t)?;
    grad_user.scale(0.5);
    grad_item.scale(0.5);
    Ok(UniformityTerm {
        value: 0.5 * (user + item),
        user,
        item,
        grad_user,
        grad_item,
    })
}

/// `Σ‖row‖²` and the per-row gradients `2·row`.
pub fn l2_term(rows: &[&[f64]]) -> (f64, Vec<Vec<f64>>) {
    let value = rows
        .iter()
        .map(|r| r.iter().map(|x| x * x).sum::<f64>())
        .sum();
    let grads = rows
        .iter()
        .map(|r| r.iter().map(|x| 2.0 * x).collect())
        .collect();
    (value, grads)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.1,
            lambda2: 0.1,
            lambda: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub rec: f64,
    pub align: f64,
    pub uniform: f64,
    pub l2: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rec: f64,
    pub align: f64,
    pub uniform: f64,
    pub l2: f64,
    pub total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda: f64,
}

pub fn total_loss(parts: LossParts, weights: LossWeights) -> LossBreakdown {
    LossBreakdown {
        rec: parts.rec,
        align: parts.align,
        uniform: parts.uniform,
        l2: parts.l2,
        total: parts.rec
            + weights.lambda1 * parts.align
            + weights.lambda2 * parts.uniform
            + weights.lambda * parts.l2,
        lambda1: weights.lambda1,
        lambda2: weights.lambda2,
        lambda: weights.lambda,
    }
}
