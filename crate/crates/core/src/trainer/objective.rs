//! The full training objective
//! `L = L_rec + λ1·L_align + λ2·L_uniform + λ·Σ‖θ_touched‖²`
//! evaluated on one mini-batch, with its gradient on the ego embeddings.
//!
//! The alignment term treats the popular groups as constants: their normalized
//! final representations are captured in a [`FrozenTargets`] snapshot, the
//! popular ego rows enter the tail representations only through that
//! snapshot, and the term contributes no gradient to popular ego rows.

use crate::backbones::Backbone;
use crate::dataset::GroupAssignment;
use crate::embeddings::{l2_normalize_rows, EmbeddingState};
use crate::error::Result;
use crate::losses::{
    alignment_gammas, alignment_side, bpr_coefficient, bpr_term, scatter_add, total_loss,
    uniformity_side_raw, KernelConfig, LossBreakdown, LossParts, LossWeights,
};
use crate::matrix::{dot, Matrix};

use super::sampling::TrainBatch;

/// Constants of the alignment term for one step.
#[derive(Debug, Clone)]
pub struct FrozenTargets {
    pub user_gamma: f64,
    pub item_gamma: f64,
    /// Normalized final representations of the sampled popular users.
    pub user_targets: Matrix,
    /// Normalized final representations of the sampled popular items.
    pub item_targets: Matrix,
    /// Ego embeddings at capture time; popular rows are read from here.
    pub ego: EmbeddingState,
}

#[derive(Debug, Clone)]
pub struct ObjectiveValue {
    pub breakdown: LossBreakdown,
    /// Gradient with respect to the ego embeddings.
    pub grad: EmbeddingState,
}

pub struct Objective<'a> {
    pub backbone: &'a Backbone,
    pub groups: &'a GroupAssignment,
    pub weights: LossWeights,
    pub kernel: KernelConfig,
}

impl<'a> Objective<'a> {
    /// Captures bandwidths and popular-group targets at the current parameters.
    pub fn freeze(&self, ego: &EmbeddingState, batch: &TrainBatch) -> Result<FrozenTargets> {
        let reps = self.backbone.forward(ego)?;
        let sample = &batch.align;
        let (user_gamma, item_gamma) = alignment_gammas(&reps.user, &reps.item, sample, &self.kernel);
        Ok(FrozenTargets {
            user_gamma,
            item_gamma,
            user_targets: l2_normalize_rows(&reps.user.gather(&sample.popular_users)),
            item_targets: l2_normalize_rows(&reps.item.gather(&sample.popular_items)),
            ego: ego.clone(),
        })
    }

    pub fn evaluate(
        &self,
        ego: &EmbeddingState,
        batch: &TrainBatch,
        frozen: &FrozenTargets,
    ) -> Result<ObjectiveValue> {
        let reps = self.backbone.forward(ego)?;
        let (num_users, num_items, dim) = (ego.num_users(), ego.num_items(), ego.dim());
        let mut grad_final = EmbeddingState {
            user: Matrix::zeros(num_users, dim),
            item: Matrix::zeros(num_items, dim),
        };
        let mut parts = LossParts::default();

        // pairwise ranking term, averaged over triples
        let scale = 1.0 / batch.triples.len().max(1) as f64;
        for &(u, i, j) in &batch.triples {
            let (z, hi, hj) = (reps.user.row(u), reps.item.row(i), reps.item.row(j));
            let (sp, sn) = (dot(z, hi), dot(z, hj));
            parts.rec += scale * bpr_term(sp, sn);
            let c = scale * bpr_coefficient(sp, sn);
            for (g, (a, b)) in grad_final.user.row_mut(u).iter_mut().zip(hi.iter().zip(hj)) {
                *g -= c * (a - b);
            }
            for (g, a) in grad_final.item.row_mut(i).iter_mut().zip(z) {
                *g -= c * a;
            }
            for (g, a) in grad_final.item.row_mut(j).iter_mut().zip(z) {
                *g += c * a;
            }
        }

        if self.weights.lambda2 > 0.0 {
            let w = 0.5 * self.weights.lambda2;
            for (rows, reps_side, grad_side) in [
                (&batch.uniform_users, &reps.user, &mut grad_final.user),
                (&batch.uniform_items, &reps.item, &mut grad_final.item),
            ] {
                // a side with a single point has no pairs and contributes nothing
                if rows.len() < 2 {
                    continue;
                }
                let (value, g) = uniformity_side_raw(&reps_side.gather(rows), self.kernel.t)?;
                parts.uniform += 0.5 * value;
                scatter_add(grad_side, rows, &g, w);
            }
        }

        let mut grad = self.backbone.backward(grad_final)?;

        if self.weights.lambda1 > 0.0 {
            batch.align.validate()?;
            let (value, align_grad) = self.alignment(ego, &reps, batch, frozen)?;
            parts.align = value;
            grad.user.add_assign(&align_grad.user);
            grad.item.add_assign(&align_grad.item);
        }

        if self.weights.lambda > 0.0 {
            let w = self.weights.lambda;
            for (rows, params, g) in [
                (&batch.uniform_users, &ego.user, &mut grad.user),
                (&batch.uniform_items, &ego.item, &mut grad.item),
            ] {
                for &r in rows.iter() {
                    let row = params.row(r);
                    parts.l2 += row.iter().map(|x| x * x).sum::<f64>();
                    for (gv, x) in g.row_mut(r).iter_mut().zip(row) {
                        *gv += 2.0 * w * x;
                    }
                }
            }
        }

        Ok(ObjectiveValue {
            breakdown: total_loss(parts, self.weights),
            grad,
        })
    }

    /// `½(MMD²_user + MMD²_item)` and its ego gradient, scaled by λ1.
    fn alignment(
        &self,
        ego: &EmbeddingState,
        reps: &EmbeddingState,
        batch: &TrainBatch,
        frozen: &FrozenTargets,
    ) -> Result<(f64, EmbeddingState)> {
        let sample = &batch.align;
        let detached;
        let tail_reps = if self.backbone.is_identity() {
            reps
        } else {
            let mixed = self.with_frozen_popular(ego, &frozen.ego);
            if &mixed == ego {
                reps
            } else {
                detached = self.backbone.forward(&mixed)?;
                &detached
            }
        };

        let (user_mmd, gu) = alignment_side(
            &frozen.user_targets,
            &tail_reps.user.gather(&sample.tail_users),
            frozen.user_gamma,
        );
        let (item_mmd, gi) = alignment_side(
            &frozen.item_targets,
            &tail_reps.item.gather(&sample.tail_items),
            frozen.item_gamma,
        );

        let w = 0.5 * self.weights.lambda1;
        let mut grad_final = EmbeddingState {
            user: Matrix::zeros(ego.num_users(), ego.dim()),
            item: Matrix::zeros(ego.num_items(), ego.dim()),
        };
        scatter_add(&mut grad_final.user, &sample.tail_users, &gu, w);
        scatter_add(&mut grad_final.item, &sample.tail_items, &gi, w);
        let mut grad = self.backbone.backward(grad_final)?;
        for u in 0..ego.num_users() {
            if self.groups.is_popular_user(u) {
                grad.user.row_mut(u).fill(0.0);
            }
        }
        for i in 0..ego.num_items() {
            if self.groups.is_popular_item(i) {
                grad.item.row_mut(i).fill(0.0);
            }
        }
        Ok((0.5 * (user_mmd + item_mmd), grad))
    }

    fn with_frozen_popular(&self, ego: &EmbeddingState, snapshot: &EmbeddingState) -> EmbeddingState {
        let mut mixed = ego.clone();
        for u in 0..ego.num_users() {
            if self.groups.is_popular_user(u) {
                mixed.user.row_mut(u).copy_from_slice(snapshot.user.row(u));
            }
        }
        for i in 0..ego.num_items() {
            if self.groups.is_popular_item(i) {
                mixed.item.row_mut(i).copy_from_slice(snapshot.item.row(i));
            }
        }
        mixed
    }

    /// Freezes at `ego` and evaluates there: one training step's loss and gradient.
    pub fn step(&self, ego: &EmbeddingState, batch: &TrainBatch) -> Result<ObjectiveValue> {
        let frozen = self.freeze(ego, batch)?;
        self.evaluate(ego, batch, &frozen)
    }
}
