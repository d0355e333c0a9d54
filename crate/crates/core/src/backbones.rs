//! Encoders mapping ego embeddings to final representations, and inner-product scoring.
//!
//! BPRMF uses the ego embeddings directly. LightGCN propagates them over the
//! symmetrically normalized user-item graph and averages layers `0..=L`.

use serde::{Deserialize, Serialize};

use crate::dataset::InteractionSet;
use crate::embeddings::EmbeddingState;
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    Bprmf,
    Lightgcn,
}

impl std::str::FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bprmf" | "mf" => Ok(BackboneKind::Bprmf),
            "lightgcn" => Ok(BackboneKind::Lightgcn),
            other => Err(Error::Config(format!("unknown backbone `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    /// Propagation depth; ignored for BPRMF.
    pub layers: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            kind: BackboneKind::Bprmf,
            layers: 3,
        }
    }
}

impl BackboneConfig {
    pub fn effective_layers(&self) -> usize {
        match self.kind {
            BackboneKind::Bprmf => 0,
            BackboneKind::Lightgcn => self.layers,
        }
    }
}

/// What to do with users or items that have no training interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IsolatedNodes {
    Reject,
    /// Leave their adjacency rows empty.
    Allow,
}

/// Symmetric `(M+N)×(M+N)` adjacency in CSR form; node `u` is a user,
/// node `M+i` is item `i`, and each edge carries `1/sqrt(deg(u)·deg(i))`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    num_users: usize,
    num_items: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(column, value)` pairs of row `r`, columns ascending.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[span.clone()].binary_search(&c) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Matrix {
        let n = self.num_nodes();
        let mut out = Matrix::zeros(n, n);
        for r in 0..n {
            for (c, v) in self.row(r) {
                out.set(r, c, v);
            }
        }
        out
    }

    /// `Ã · x`.
    pub fn multiply(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.num_nodes() {
            return Err(Error::Shape(format!(
                "adjacency has {} nodes, embedding has {} rows",
                self.num_nodes(),
                x.rows()
            )));
        }
        let d = x.cols();
        let mut out = Matrix::zeros(x.rows(), d);
        for r in 0..self.num_nodes() {
            let acc = out.row_mut(r);
            for (c, v) in self.row(r) {
                for (a, b) in acc.iter_mut().zip(x.row(c)) {
                    *a += v * b;
                }
            }
        }
        Ok(out)
    }
}

pub fn build_normalized_adjacency(train: &InteractionSet) -> Result<NormalizedAdjacency> {
    build_normalized_adjacency_with(train, IsolatedNodes::Reject)
}

pub fn build_normalized_adjacency_with(
    train: &InteractionSet,
    isolated: IsolatedNodes,
) -> Result<NormalizedAdjacency> {
    let m = train.num_users();
    let n = train.num_items();
    let user_deg = train.user_degrees();
    let item_deg = train.item_degrees();
    if isolated == IsolatedNodes::Reject {
        if let Some(u) = user_deg.iter().position(|&d| d == 0) {
            return Err(Error::ZeroDegree(format!("user {u}")));
        }
        if let Some(i) = item_deg.iter().position(|&d| d == 0) {
            return Err(Error::ZeroDegree(format!("item {i}")));
        }
    }

    let mut item_users: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (u, i) in train.pairs() {
        item_users[i].push(u);
    }

    let mut row_ptr = Vec::with_capacity(m + n + 1);
    let mut col_idx = Vec::with_capacity(2 * train.len());
    let mut values = Vec::with_capacity(2 * train.len());
    row_ptr.push(0);
    for (u, items) in train.user_items().iter().enumerate() {
        for &i in items {
            col_idx.push(m + i);
            values.push(1.0 / ((user_deg[u] * item_deg[i]) as f64).sqrt());
        }
        row_ptr.push(col_idx.len());
    }
    for (i, users) in item_users.iter().enumerate() {
        // pairs() is user-major, so users are already ascending
        for &u in users {
            col_idx.push(u);
            values.push(1.0 / ((user_deg[u] * item_deg[i]) as f64).sqrt());
        }
        row_ptr.push(col_idx.len());
    }

    Ok(NormalizedAdjacency {
        num_users: m,
        num_items: n,
        row_ptr,
        col_idx,
        values,
    })
}

/// Mean of `Ã^l · emb0` over `l = 0..=layers`.
pub fn propagate(emb0: &Matrix, adj: &NormalizedAdjacency, layers: usize) -> Result<Matrix> {
    if emb0.rows() != adj.num_nodes() {
        return Err(Error::Shape(format!(
            "adjacency has {} nodes, embedding has {} rows",
            adj.num_nodes(),
            emb0.rows()
        )));
    }
    let mut sum = emb0.clone();
    let mut current = emb0.clone();
    for _ in 0..layers {
        current = adj.multiply(&current)?;
        sum.add_assign(&current);
    }
    sum.scale(1.0 / (layers + 1) as f64);
    Ok(sum)
}

/// A configured encoder. For LightGCN it owns the normalized training graph.
#[derive(Debug, Clone)]
pub struct Backbone {
    config: BackboneConfig,
    adjacency: Option<NormalizedAdjacency>,
}

impl Backbone {
    pub fn new(config: BackboneConfig, train: &InteractionSet) -> Result<Self> {
        let adjacency = match config.kind {
            BackboneKind::Bprmf => None,
            BackboneKind::Lightgcn => Some(build_normalized_adjacency_with(
                train,
                IsolatedNodes::Allow,
            )?),
        };
        Ok(Backbone { config, adjacency })
    }

    pub fn bprmf() -> Self {
        Backbone {
            config: BackboneConfig {
                kind: BackboneKind::Bprmf,
                layers: 0,
            },
            adjacency: None,
        }
    }

    pub fn config(&self) -> BackboneConfig {
        self.config
    }

    /// True when the final representations are the ego embeddings themselves.
    pub fn is_identity(&self) -> bool {
        self.adjacency.is_none() || self.config.effective_layers() == 0
    }

    /// Final user/item representations.
    pub fn forward(&self, ego: &EmbeddingState) -> Result<EmbeddingState> {
        match &self.adjacency {
            Some(adj) if !self.is_identity() => {
                let out = propagate(&ego.stacked(), adj, self.config.effective_layers())?;
                Ok(EmbeddingState::from_stacked(out, ego.num_users()))
            }
            _ => Ok(ego.clone()),
        }
    }

    /// Pulls a gradient on the final representations back to the ego embeddings.
    /// Propagation is linear with a symmetric operator, so this is the forward map.
    pub fn backward(&self, grad_final: EmbeddingState) -> Result<EmbeddingState> {
        match &self.adjacency {
            Some(adj) if !self.is_identity() => {
                let num_users = grad_final.num_users();
                let out = propagate(&grad_final.stacked(), adj, self.config.effective_layers())?;
                Ok(EmbeddingState::from_stacked(out, num_users))
            }
            _ => Ok(grad_final),
        }
    }
}

/// `s(u, i) = z_uᵀ h_i`.
pub fn score(user: &[f64], item: &[f64]) -> f64 {
    assert_eq!(user.len(), item.len(), "score needs equal dimensions");
    dot(user, item)
}

/// Scores of user `u` against every item.
pub fn score_all(u: usize, reps: &EmbeddingState) -> Vec<f64> {
    let z = reps.user.row(u);
    reps.item.iter_rows().map(|h| dot(z, h)).collect()
}

/// Score rows for a block of users, `users.len()×N`.
pub fn score_block(users: &[usize], reps: &EmbeddingState) -> Matrix {
    reps.user.gather(users).matmul_transposed(&reps.item)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_edge_has_unit_weight() {
        let train = InteractionSet::from_pairs(1, 1, [(0, 0)]).unwrap();
        let adj = build_normalized_adjacency(&train).unwrap();
        assert_eq!(adj.nnz(), 2);
        assert_eq!(adj.get(0, 1), 1.0);
        assert_eq!(adj.get(1, 0), 1.0);
    }

    #[test]
    fn star_user_weights() {
        let train = InteractionSet::from_pairs(1, 2, [(0, 0), (0, 1)]).unwrap();
        let adj = build_normalized_adjacency(&train).unwrap();
        let w = 1.0 / 2f64.sqrt();
        assert_eq!(adj.get(0, 1), w);
        assert_eq!(adj.get(0, 2), w);
        assert_eq!(adj.get(2, 0), w);
    }

    #[test]
    fn adjacency_is_exactly_symmetric() {
        let train =
            InteractionSet::from_pairs(3, 4, [(0, 0), (0, 3), (1, 1), (1, 3), (2, 2), (2, 0)])
                .unwrap();
        let dense = build_normalized_adjacency(&train).unwrap().to_dense();
        for r in 0..7 {
            for c in 0..7 {
                assert_eq!(dense.get(r, c), dense.get(c, r));
            }
        }
        // no user-user or item-item entries
        assert_eq!(dense.get(0, 1), 0.0);
        assert_eq!(dense.get(3, 4), 0.0);
    }

    #[test]
    fn zero_degree_item_is_rejected_unless_allowed() {
        let train = InteractionSet::from_pairs(1, 2, [(0, 0)]).unwrap();
        assert!(matches!(
            build_normalized_adjacency(&train),
            Err(Error::ZeroDegree(_))
        ));
        let adj = build_normalized_adjacency_with(&train, IsolatedNodes::Allow).unwrap();
        assert_eq!(adj.row(2).count(), 0);
    }

    #[test]
    fn zero_layers_is_identity() {
        let train = InteractionSet::from_pairs(1, 1, [(0, 0)]).unwrap();
        let adj = build_normalized_adjacency(&train).unwrap();
        let e = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 5.0]]).unwrap();
        assert_eq!(propagate(&e, &adj, 0).unwrap(), e);
    }

    #[test]
    fn one_layer_on_two_nodes_averages() {
        let train = InteractionSet::from_pairs(1, 1, [(0, 0)]).unwrap();
        let adj = build_normalized_adjacency(&train).unwrap();
        let e = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 3.0]]).unwrap();
        let out = propagate(&e, &adj, 1).unwrap();
        assert_eq!(out.row(0), &[0.5, 1.5]);
        assert_eq!(out.row(1), &[0.5, 1.5]);
    }

    #[test]
    fn propagate_rejects_wrong_shape() {
        let train = InteractionSet::from_pairs(1, 1, [(0, 0)]).unwrap();
        let adj = build_normalized_adjacency(&train).unwrap();
        assert!(propagate(&Matrix::zeros(3, 2), &adj, 1).is_err());
    }

    #[test]
    fn scores() {
        assert_eq!(score(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert_eq!(score(&[1.0, 1.0], &[1.0, 1.0]), 2.0);
        let reps = EmbeddingState::new(
            Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, -2.0]]).unwrap(),
            Matrix::from_rows(&[vec![1.0, 1.0], vec![0.5, 0.25], vec![-1.0, 3.0]]).unwrap(),
        )
        .unwrap();
        assert_eq!(score_all(0, &reps), vec![0.0; 3]);
        let s = score_all(1, &reps);
        for (i, v) in s.iter().enumerate() {
            assert_eq!(*v, score(reps.user.row(1), reps.item.row(i)));
        }
        let block = score_block(&[1, 0], &reps);
        assert_eq!(block.row(0), s.as_slice());
    }
}
