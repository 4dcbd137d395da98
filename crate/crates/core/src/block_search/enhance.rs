//! Complexity/loss history and the gradient-enhancement coefficient.

use std::collections::VecDeque;

use serde::Serialize;

/// Below this `|Δy|` the step ratio is treated as undefined.
pub const DELTA_Y_GUARD: f64 = 1e-12;

/// The last `m` pairs of (expected parameter count, validation loss).
#[derive(Debug, Clone)]
pub struct ComplexityLossHistory {
    window: usize,
    pairs: VecDeque<(f64, f64)>,
}

impl ComplexityLossHistory {
    pub fn new(window: usize) -> Self {
        Self {
            window: window.max(2),
            pairs: VecDeque::with_capacity(window.max(2)),
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn push(&mut self, x: f64, y: f64) {
        if self.pairs.len() == self.window {
            self.pairs.pop_front();
        }
        self.pairs.push_back((x, y));
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.pairs.iter().copied()
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }
}

/// Least-squares line `y = theta0 + theta1 * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComplexityFit {
    pub theta0: f64,
    pub theta1: f64,
}

/// Fits the current window. `None` when fewer than two pairs are stored or
/// all `x` coincide.
pub fn fit_theta1(history: &ComplexityLossHistory) -> Option<ComplexityFit> {
    let m = history.len();
    if m < 2 {
        return None;
    }
    let (mut sx, mut sy) = (0.0, 0.0);
    for (x, y) in history.pairs() {
        sx += x;
        sy += y;
    }
    let mf = m as f64;
    // centred form of the normal equations, stable for large x
    let (mx, my) = (sx / mf, sy / mf);
    let (mut cxy, mut cxx) = (0.0, 0.0);
    for (x, y) in history.pairs() {
        cxy += (x - mx) * (y - my);
        cxx += (x - mx) * (x - mx);
    }
    if cxx <= 0.0 || !cxx.is_finite() {
        return None;
    }
    let theta1 = cxy / cxx;
    Some(ComplexityFit {
        theta0: my - theta1 * mx,
        theta1,
    })
}

/// `Δx / Δy` over the two most recent pairs; `None` with fewer than two
/// pairs or when `|Δy|` falls under [`DELTA_Y_GUARD`].
pub fn grad_theta(history: &ComplexityLossHistory) -> Option<f64> {
    let n = history.len();
    if n < 2 {
        return None;
    }
    let (x1, y1) = history.pairs[n - 1];
    let (x0, y0) = history.pairs[n - 2];
    let dy = y1 - y0;
    if dy.abs() < DELTA_Y_GUARD {
        return None;
    }
    Some((x1 - x0) / dy)
}

/// 1 when `grad_theta > theta1` or `grad_theta > 0`, else 0.
pub fn sigma(grad_theta: f64, theta1: f64) -> u8 {
    u8::from(grad_theta > theta1 || grad_theta > 0.0)
}

/// `clamp(sigma * |grad_theta| / theta1, 0, cap)`; zero for `theta1 == 0`
/// or non-finite input.
pub fn phi(grad_theta: f64, theta1: f64, cap: f64) -> f64 {
    if theta1 == 0.0 || !grad_theta.is_finite() || !theta1.is_finite() {
        return 0.0;
    }
    let raw = sigma(grad_theta, theta1) as f64 * grad_theta.abs() / theta1;
    if raw.is_nan() {
        return 0.0;
    }
    raw.clamp(0.0, cap)
}

/// Everything decided at one architecture step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnhanceRecord {
    pub theta1: Option<f64>,
    pub grad_theta: Option<f64>,
    pub sigma: u8,
    pub phi: f64,
}

/// Turns the stream of (complexity, loss) pairs into per-step multipliers.
#[derive(Debug, Clone)]
pub struct Enhancer {
    pub history: ComplexityLossHistory,
    pub enabled: bool,
    pub phi_cap: f64,
    pub warmup_steps: usize,
    steps: usize,
}

impl Enhancer {
    pub fn new(window: usize, phi_cap: f64, warmup_steps: usize, enabled: bool) -> Self {
        Self {
            history: ComplexityLossHistory::new(window),
            enabled,
            phi_cap,
            warmup_steps,
            steps: 0,
        }
    }

    /// Records the pair for this step and returns the coefficient to apply.
    pub fn observe(&mut self, x: f64, y: f64) -> EnhanceRecord {
        self.history.push(x, y);
        self.steps += 1;
        let theta1 = fit_theta1(&self.history).map(|f| f.theta1);
        let grad = grad_theta(&self.history);
        let (sig, p) = match (theta1, grad) {
            (Some(t), Some(g)) => (sigma(g, t), phi(g, t, self.phi_cap)),
            _ => (0, 0.0),
        };
        let active = self.enabled && self.steps > self.warmup_steps;
        EnhanceRecord {
            theta1,
            grad_theta: grad,
            sigma: sig,
            phi: if active { p } else { 0.0 },
        }
    }

    /// Starts a fresh history, e.g. when the supernet changes between stages.
    pub fn reset(&mut self) {
        self.history.clear();
        self.steps = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist(points: &[(f64, f64)]) -> ComplexityLossHistory {
        let mut h = ComplexityLossHistory::new(points.len().max(2));
        for &(x, y) in points {
            h.push(x, y);
        }
        h
    }

    #[test]
    fn collinear_slopes() {
        assert_eq!(fit_theta1(&hist(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)])).unwrap().theta1, 1.0);
        assert_eq!(fit_theta1(&hist(&[(0.0, 0.0), (2.0, 4.0)])).unwrap().theta1, 2.0);
        assert!(fit_theta1(&hist(&[(1.0, 0.0), (1.0, 4.0)])).is_none());
        assert!(fit_theta1(&hist(&[(1.0, 0.0)])).is_none());
    }

    #[test]
    fn window_drops_oldest() {
        let mut h = ComplexityLossHistory::new(3);
        for k in 0..10 {
            h.push(k as f64, if k < 7 { 100.0 } else { k as f64 * 2.0 });
        }
        assert_eq!(h.len(), 3);
        assert!((fit_theta1(&h).unwrap().theta1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn grad_theta_cases() {
        assert_eq!(grad_theta(&hist(&[(0.0, 0.0), (2.0, 1.0)])), Some(2.0));
        assert_eq!(grad_theta(&hist(&[(5.0, 1.0), (2.0, 2.0)])), Some(-3.0));
        assert_eq!(grad_theta(&hist(&[(0.0, 1.0), (2.0, 1.0)])), None);
        assert_eq!(grad_theta(&hist(&[(0.0, 1.0)])), None);
    }

    #[test]
    fn sigma_and_phi_cases() {
        assert_eq!(sigma(1.0, 5.0), 1);
        assert_eq!(sigma(-2.0, -1.0), 0);
        assert_eq!(sigma(-0.5, -1.0), 1);
        assert_eq!(phi(2.0, 1.0, 10.0), 2.0);
        assert_eq!(phi(100.0, 0.01, 10.0), 10.0);
        assert_eq!(phi(-2.0, -1.0, 10.0), 0.0);
        assert_eq!(phi(-0.5, -1.0, 10.0), 0.0);
        assert_eq!(phi(3.0, 0.0, 10.0), 0.0);
    }

    #[test]
    fn warmup_and_disable_force_zero() {
        let pts = [(10.0, 2.0), (8.0, 1.5), (6.0, 1.4), (4.0, 1.0)];
        let mut warm = Enhancer::new(4, 10.0, 2, true);
        let mut off = Enhancer::new(4, 10.0, 0, false);
        let mut on = Enhancer::new(4, 10.0, 0, true);
        for (k, &(x, y)) in pts.iter().enumerate() {
            let w = warm.observe(x, y);
            let o = off.observe(x, y);
            let a = on.observe(x, y);
            assert_eq!(o.phi, 0.0);
            assert_eq!((w.theta1, w.grad_theta, w.sigma), (a.theta1, a.grad_theta, a.sigma));
            if k < 2 {
                assert_eq!(w.phi, 0.0);
            } else {
                assert_eq!(w.phi, a.phi);
                assert!(a.phi > 0.0, "step {k}: {a:?}");
            }
        }
    }
}
