//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward passes, so it is independent
//! of every backward rule it is used to verify.

use super::{ParamStore, Session, Tensor, Var};
use crate::error::Result;

/// Below this magnitude the error is measured absolutely.
pub const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<(String, f64, f64)>,
}

impl GradCheckReport {
    fn record(&mut self, label: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        self.checked += 1;
        let scale = analytic.abs().max(numeric.abs());
        let err = if scale > REL_FLOOR {
            (analytic - numeric).abs() / scale
        } else {
            (analytic - numeric).abs()
        };
        if err > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(err);
            self.worst = Some((label(), analytic, numeric));
        }
    }
}

/// Compares reverse-mode gradients of `f` against central differences with
/// step `h`, for every element of every parameter in `store` and every
/// tensor in `inputs`. `f` must return a scalar loss.
pub fn check_gradients<F>(store: &ParamStore, inputs: &[Tensor], h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Session<'_>, &[Var]) -> Result<Var>,
{
    let eval = |store: &ParamStore, inputs: &[Tensor]| -> Result<f64> {
        let mut s = Session::new(store);
        let vars: Vec<Var> = inputs.iter().map(|t| s.graph.leaf(t.clone(), false)).collect();
        let loss = f(&mut s, &vars)?;
        Ok(s.graph.value(loss).data()[0])
    };

    let mut s = Session::new(store);
    let vars: Vec<Var> = inputs.iter().map(|t| s.graph.leaf(t.clone(), true)).collect();
    // bind every parameter so unused ones report exact zeros
    for id in store.ids() {
        s.param(id);
    }
    let loss = f(&mut s, &vars)?;
    let grads = s.graph.backward(loss)?;
    let param_grads = s.param_grads(&grads);

    let mut report = GradCheckReport::default();
    let mut work = store.clone();
    for (pi, id) in store.ids().enumerate() {
        for k in 0..store.get(id).numel() {
            let orig = store.get(id).data()[k];
            work.tensors_mut()[pi].data_mut()[k] = orig + h;
            let plus = eval(&work, inputs)?;
            work.tensors_mut()[pi].data_mut()[k] = orig - h;
            let minus = eval(&work, inputs)?;
            work.tensors_mut()[pi].data_mut()[k] = orig;
            report.record(|| format!("{}[{k}]", store.name(id)), param_grads[pi][k], (plus - minus) / (2.0 * h));
        }
    }
    let mut work_inputs = inputs.to_vec();
    for (ii, v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*v);
        for k in 0..inputs[ii].numel() {
            let orig = inputs[ii].data()[k];
            work_inputs[ii].data_mut()[k] = orig + h;
            let plus = eval(store, &work_inputs)?;
            work_inputs[ii].data_mut()[k] = orig - h;
            let minus = eval(store, &work_inputs)?;
            work_inputs[ii].data_mut()[k] = orig;
            report.record(|| format!("input{ii}[{k}]"), analytic[k], (plus - minus) / (2.0 * h));
        }
    }
    Ok(report)
}
