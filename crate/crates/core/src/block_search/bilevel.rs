//! Architecture gradients for the weight/architecture bilevel problem.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Loss and both gradients at one `(weights, alpha)` point.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrads {
    pub loss: f64,
    pub dw: Vec<f64>,
    pub dalpha: Vec<f64>,
}

/// A model whose loss depends on flat weights (held by the model) and flat
/// architecture parameters (passed in).
pub trait Bilevel {
    type Batch;

    fn weights(&self) -> Vec<f64>;

    fn set_weights(&mut self, w: &[f64]) -> Result<()>;

    fn loss_grads(&self, alpha: &[f64], batch: &Self::Batch) -> Result<LossGrads>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchMode {
    FirstOrder,
    SecondOrder,
}

/// Gradient for one architecture step plus the validation loss it saw.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchGradient {
    pub grad: Vec<f64>,
    pub val_loss: f64,
}

fn checked(lg: LossGrads, what: &str) -> Result<LossGrads> {
    if !lg.loss.is_finite() {
        return Err(Error::Numeric(format!("{what} loss is {}", lg.loss)));
    }
    Ok(lg)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Central difference `(∇α L(w + εv) − ∇α L(w − εv)) / 2ε`, an estimate of
/// the mixed second derivative applied to `v`. The model's weights are
/// restored afterwards.
pub fn mixed_hvp_fd<M: Bilevel>(model: &mut M, alpha: &[f64], batch: &M::Batch, v: &[f64], eps: f64) -> Result<Vec<f64>> {
    let w = model.weights();
    if v.len() != w.len() {
        return Err(Error::shape("mixed_hvp_fd", format!("direction has {} entries, weights {}", v.len(), w.len())));
    }
    let shifted = |sign: f64| -> Vec<f64> { w.iter().zip(v).map(|(a, b)| a + sign * eps * b).collect() };
    model.set_weights(&shifted(1.0))?;
    let plus = model.loss_grads(alpha, batch);
    model.set_weights(&shifted(-1.0))?;
    let minus = model.loss_grads(alpha, batch);
    model.set_weights(&w)?;
    let (plus, minus) = (checked(plus?, "perturbed training")?, checked(minus?, "perturbed training")?);
    Ok(plus
        .dalpha
        .iter()
        .zip(&minus.dalpha)
        .map(|(p, m)| (p - m) / (2.0 * eps))
        .collect())
}

/// First order: `∇α L_val(w, α)`.
///
/// Second order: with `w' = w − ξ ∇w L_train(w, α)` and `v = ∇w L_val(w', α)`,
/// returns `∇α L_val(w', α) − ξ · mixed_hvp_fd(v, 0.01 / ‖v‖)`. The weights
/// are left unchanged, and `val_loss` is then measured at `w'`.
pub fn arch_gradient<M: Bilevel>(
    model: &mut M,
    alpha: &[f64],
    train: &M::Batch,
    val: &M::Batch,
    mode: ArchMode,
    xi: f64,
) -> Result<ArchGradient> {
    match mode {
        ArchMode::FirstOrder => {
            let lv = checked(model.loss_grads(alpha, val)?, "validation")?;
            Ok(ArchGradient {
                grad: lv.dalpha,
                val_loss: lv.loss,
            })
        }
        ArchMode::SecondOrder => {
            let w = model.weights();
            let lt = checked(model.loss_grads(alpha, train)?, "training")?;
            let unrolled: Vec<f64> = w.iter().zip(&lt.dw).map(|(a, g)| a - xi * g).collect();
            model.set_weights(&unrolled)?;
            let lv = model.loss_grads(alpha, val);
            model.set_weights(&w)?;
            let lv = checked(lv?, "validation")?;
            let n = norm(&lv.dw);
            let mut grad = lv.dalpha;
            if n > 0.0 && n.is_finite() {
                let hvp = mixed_hvp_fd(model, alpha, train, &lv.dw, 0.01 / n)?;
                for (g, h) in grad.iter_mut().zip(hvp) {
                    *g -= xi * h;
                }
            }
            Ok(ArchGradient {
                grad,
                val_loss: lv.loss,
            })
        }
    }
}

/// `alpha -= lr * (1 + phi) * grad`.
pub fn apply_arch_update(alpha: &mut [f64], grad: &[f64], lr: f64, phi: f64) -> Result<()> {
    if alpha.len() != grad.len() {
        return Err(Error::shape("arch update", format!("{} alphas, {} gradients", alpha.len(), grad.len())));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite architecture gradient".into()));
    }
    let step = lr * (1.0 + phi);
    for (a, g) in alpha.iter_mut().zip(grad) {
        *a -= step * g;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `L(w, a) = (a0 w0 + a1 w1 - t)^2 / 2` with the target as the batch.
    struct Quad {
        w: Vec<f64>,
    }

    impl Bilevel for Quad {
        type Batch = f64;

        fn weights(&self) -> Vec<f64> {
            self.w.clone()
        }

        fn set_weights(&mut self, w: &[f64]) -> Result<()> {
            self.w = w.to_vec();
            Ok(())
        }

        fn loss_grads(&self, a: &[f64], t: &f64) -> Result<LossGrads> {
            let r = a[0] * self.w[0] + a[1] * self.w[1] - t;
            Ok(LossGrads {
                loss: 0.5 * r * r,
                dw: vec![r * a[0], r * a[1]],
                dalpha: vec![r * self.w[0], r * self.w[1]],
            })
        }
    }

    #[test]
    fn quadratic_mixed_term_is_exact() {
        // ∂²L/∂a_i∂w_j = a_j w_i + r δ_ij; linear in w so central differences are exact
        let mut m = Quad { w: vec![0.7, -1.3] };
        let (a, t, v) = ([0.4, 1.1], 0.5, [0.3, -0.8]);
        let r = a[0] * m.w[0] + a[1] * m.w[1] - t;
        let exact: Vec<f64> = (0..2)
            .map(|i| (0..2).map(|j| (a[j] * m.w[i] + if i == j { r } else { 0.0 }) * v[j]).sum())
            .collect();
        for eps in [1e-1, 1e-3] {
            let fd = mixed_hvp_fd(&mut m, &a, &t, &v, eps).unwrap();
            for (x, y) in fd.iter().zip(&exact) {
                assert!((x - y).abs() < 1e-9, "{x} vs {y}");
            }
        }
        assert_eq!(m.w, vec![0.7, -1.3]);
    }

    #[test]
    fn second_order_restores_weights() {
        let mut m = Quad { w: vec![0.2, 0.9] };
        let first = arch_gradient(&mut m, &[1.0, 2.0], &0.0, &1.0, ArchMode::FirstOrder, 0.1).unwrap();
        let second = arch_gradient(&mut m, &[1.0, 2.0], &0.0, &1.0, ArchMode::SecondOrder, 0.1).unwrap();
        assert_eq!(m.w, vec![0.2, 0.9]);
        assert_ne!(first.grad, second.grad);
        let zero_xi = arch_gradient(&mut m, &[1.0, 2.0], &0.0, &1.0, ArchMode::SecondOrder, 0.0).unwrap();
        assert_eq!(zero_xi, first);
    }

    #[test]
    fn update_scales_by_one_plus_phi() {
        let g = [0.3, -1.7, 2.2e-3];
        let mut plain = [1.0, 2.0, 3.0];
        let mut base = plain;
        apply_arch_update(&mut plain, &g, 0.05, 0.0).unwrap();
        for (a, d) in base.iter_mut().zip(&g) {
            *a -= 0.05 * d;
        }
        assert_eq!(plain, base);
        // from zero the applied step is the stored value, so doubling is exact
        let (mut once, mut twice) = ([0.0; 3], [0.0; 3]);
        apply_arch_update(&mut once, &g, 0.05, 0.0).unwrap();
        apply_arch_update(&mut twice, &g, 0.05, 1.0).unwrap();
        for i in 0..3 {
            assert_eq!(twice[i], 2.0 * once[i]);
        }
        assert!(apply_arch_update(&mut twice, &[f64::NAN, 0.0, 0.0], 0.1, 0.0).is_err());
    }
}
