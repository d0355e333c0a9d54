//! Bias-corrected Adam with lazy (row-sparse) updates.

use crate::embeddings::EmbeddingState;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m_user: Matrix,
    pub v_user: Matrix,
    pub m_item: Matrix,
    pub v_item: Matrix,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &EmbeddingState) -> Self {
        let zeros = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        AdamState {
            m_user: zeros(&params.user),
            v_user: zeros(&params.user),
            m_item: zeros(&params.item),
            v_item: zeros(&params.item),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam step. Rows whose gradient is entirely zero keep their parameters
/// and moments untouched.
pub fn adam_step(
    params: &mut EmbeddingState,
    grads: &EmbeddingState,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    let shapes = |s: &EmbeddingState| (s.user.rows(), s.item.rows(), s.dim());
    if shapes(params) != shapes(grads) || state.m_user.rows() != params.user.rows() {
        return Err(Error::Shape("parameters, gradients and Adam state disagree".into()));
    }
    if !grads.all_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    state.step += 1;
    let bc1 = 1.0 - state.beta1.powf(state.step as f64);
    let bc2 = 1.0 - state.beta2.powf(state.step as f64);
    let hyper = (state.beta1, state.beta2, state.eps, lr, bc1, bc2);
    update_matrix(&mut params.user, &grads.user, &mut state.m_user, &mut state.v_user, hyper);
    update_matrix(&mut params.item, &grads.item, &mut state.m_item, &mut state.v_item, hyper);
    Ok(())
}

fn update_matrix(
    param: &mut Matrix,
    grad: &Matrix,
    m: &mut Matrix,
    v: &mut Matrix,
    (beta1, beta2, eps, lr, bc1, bc2): (f64, f64, f64, f64, f64, f64),
) {
    for r in 0..param.rows() {
        let g = grad.row(r);
        if g.iter().all(|&x| x == 0.0) {
            continue;
        }
        let (p, mr, vr) = (param.row_mut(r), m.row_mut(r), v.row_mut(r));
        for c in 0..g.len() {
            mr[c] = beta1 * mr[c] + (1.0 - beta1) * g[c];
            vr[c] = beta2 * vr[c] + (1.0 - beta2) * g[c] * g[c];
            let m_hat = mr[c] / bc1;
            let v_hat = vr[c] / bc2;
            p[c] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(rows: &[Vec<f64>]) -> EmbeddingState {
        EmbeddingState::new(
            Matrix::from_rows(rows).unwrap(),
            Matrix::from_rows(&[vec![0.0; rows[0].len()]]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = state(&[vec![1.0, -2.0, 0.5]]);
        let before = p.clone();
        let g = state(&[vec![0.3, -4.0, 0.05]]);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, 0.001).unwrap();
        for c in 0..3 {
            let delta = p.user.get(0, c) - before.user.get(0, c);
            let expected = -0.001 * g.user.get(0, c).signum();
            assert!((delta - expected).abs() < 1e-9, "coord {c}: {delta}");
        }
    }

    #[test]
    fn constant_gradient_step_size_tends_to_lr() {
        let mut p = state(&[vec![0.0, 0.0]]);
        let g = state(&[vec![2.5, -0.01]]);
        let mut s = AdamState::new(&p);
        let mut last = p.clone();
        for _ in 0..5000 {
            last = p.clone();
            adam_step(&mut p, &g, &mut s, 0.01).unwrap();
        }
        let d0 = p.user.get(0, 0) - last.user.get(0, 0);
        let d1 = p.user.get(0, 1) - last.user.get(0, 1);
        assert!((d0 + 0.01).abs() < 1e-6 && (d1 - 0.01).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_rows_are_untouched() {
        let mut p = state(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let before = p.clone();
        let g = state(&[vec![0.0, 0.0], vec![1.0, 0.0]]);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, 0.1).unwrap();
        assert_eq!(p.user.row(0), before.user.row(0));
        assert_ne!(p.user.row(1), before.user.row(1));
        assert_eq!(s.m_user.row(0), &[0.0, 0.0]);

        let mut q = before.clone();
        let zero = state(&[vec![0.0, 0.0], vec![0.0, 0.0]]);
        adam_step(&mut q, &zero, &mut AdamState::new(&before), 0.1).unwrap();
        assert_eq!(q, before);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = state(&[vec![1.0]]);
        let g = state(&[vec![f64::NAN]]);
        let mut s = AdamState::new(&p);
        assert!(matches!(
            adam_step(&mut p, &g, &mut s, 0.1),
            Err(Error::NonFinite(_))
        ));
    }
}
