use rand::Rng;

use super::bilevel::{Bilevel, LossGrads};
use crate::data::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::network::{AlphaVars, CellNetwork, NetLayout, NetworkPlan};
use crate::search_space::ArchParams;
use crate::tensor::{ParamStore, SgdConfig, SgdState, Session};

/// A proxy network with every edge mixed, its weights and its alphas.
#[derive(Debug, Clone)]
pub struct Supernet {
    pub net: CellNetwork,
    pub store: ParamStore,
    pub alpha: ArchParams,
    opt: SgdState,
}

impl Supernet {
    pub fn new<R: Rng + ?Sized>(plan: &NetworkPlan, alpha: ArchParams, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = CellNetwork::build(plan, NetLayout::Mixed(&alpha), &mut store, rng)?;
        Ok(Self {
            net,
            store,
            alpha,
            opt: SgdState::new(),
        })
    }

    pub fn plan(&self) -> &NetworkPlan {
        &self.net.plan
    }

    /// Softmax-weighted parameter count under the current alphas.
    pub fn expected_complexity(&self) -> f64 {
        self.net.plan.expected_params(&self.alpha)
    }

    /// Copies every tensor of `other` whose name and shape match one here.
    /// Returns the number of tensors copied.
    pub fn inherit(&mut self, other: &ParamStore) -> usize {
        let mut copied = 0;
        let ids: Vec<_> = self.store.ids().collect();
        for id in ids {
            let Some(src) = other.find(self.store.name(id)).map(|o| other.get(o)) else {
                continue;
            };
            if src.shape() == self.store.get(id).shape() {
                self.store.set_values(id, src.data()).expect("shape checked");
                copied += 1;
            }
        }
        copied
    }

    fn forward_grads(&self, alpha: &ArchParams, batch: &Batch, want_alpha: bool) -> Result<(f64, Vec<Vec<f64>>, Vec<f64>)> {
        let mut s = Session::new(&self.store);
        let vars = AlphaVars::bind(&mut s, alpha, want_alpha);
        let x = s.graph.leaf(batch.images.clone(), false);
        let logits = self.net.forward(&mut s, x, Some(&vars))?;
        let loss = s.graph.cross_entropy(logits, &batch.labels)?;
        let value = s.graph.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::Numeric(format!("supernet loss is {value}")));
        }
        let g = s.graph.backward(loss)?;
        let dalpha = if want_alpha { vars.flat_grad(&g) } else { Vec::new() };
        Ok((value, s.param_grads(&g), dalpha))
    }

    /// Fraction of `data` classified correctly under the current alphas.
    pub fn accuracy(&self, data: &Dataset, batch_size: usize) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("cannot score an empty dataset".into()));
        }
        let mut correct = 0usize;
        for idx in data.sequential_batches(batch_size.max(2)) {
            let batch = data.batch::<rand_chacha::ChaCha8Rng>(&idx, None);
            let mut s = Session::new(&self.store);
            let vars = AlphaVars::bind(&mut s, &self.alpha, false);
            let x = s.graph.leaf(batch.images, false);
            let logits = self.net.forward(&mut s, x, Some(&vars))?;
            let k = data.num_classes;
            for (row, &label) in s.graph.value(logits).data().chunks(k).zip(&batch.labels) {
                let best = (0..k).fold(0, |b, j| if row[j] > row[b] { j } else { b });
                correct += usize::from(best == label);
            }
        }
        Ok(correct as f64 / data.len() as f64)
    }

    /// One SGD step on the weights with the alphas held fixed.
    pub fn weight_step(&mut self, batch: &Batch, lr: f64, cfg: &SgdConfig) -> Result<f64> {
        let (loss, grads, _) = self.forward_grads(&self.alpha, batch, false)?;
        self.store.sgd_step(&grads, lr, cfg, &mut self.opt)?;
        Ok(loss)
    }
}

impl Bilevel for Supernet {
    type Batch = Batch;

    fn weights(&self) -> Vec<f64> {
        self.store.flatten()
    }

    fn set_weights(&mut self, w: &[f64]) -> Result<()> {
        self.store.assign_flat(w)
    }

    fn loss_grads(&self, alpha: &[f64], batch: &Batch) -> Result<LossGrads> {
        let mut a = self.alpha.clone();
        a.assign_flat(alpha)?;
        let (loss, grads, dalpha) = self.forward_grads(&a, batch, true)?;
        Ok(LossGrads {
            loss,
            dw: grads.concat(),
            dalpha,
        })
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::data::synth_dataset;

    #[test]
    fn bilevel_gradients_match_weight_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let plan = NetworkPlan::proxy((8, 8), 1, 2, 4, 3).unwrap();
        let alpha = ArchParams::init(4, 1e-3, &mut rng).unwrap();
        let mut net = Supernet::new(&plan, alpha, &mut rng).unwrap();
        let data = synth_dataset(1, 6, 3, 8).unwrap();
        let batch = data.batch::<ChaCha8Rng>(&[0, 1, 2, 3, 4, 5], None);
        let flat = net.alpha.flatten();
        let lg = net.loss_grads(&flat, &batch).unwrap();
        assert_eq!(lg.dw.len(), net.store.numel());
        assert_eq!(lg.dalpha.len(), flat.len());
        assert!(lg.dalpha.iter().any(|g| *g != 0.0));

        let before = net.weights();
        let cfg = SgdConfig {
            momentum: 0.0,
            weight_decay: 0.0,
            ..SgdConfig::default()
        };
        let loss = net.weight_step(&batch, 0.1, &cfg).unwrap();
        assert_eq!(loss, lg.loss);
        let after = net.weights();
        for ((b, a), g) in before.iter().zip(&after).zip(&lg.dw) {
            assert!((b - 0.1 * g - a).abs() < 1e-15);
        }
    }

    #[test]
    fn inherit_copies_matching_tensors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let plan = NetworkPlan::proxy((8, 8), 1, 2, 4, 3).unwrap();
        let alpha = ArchParams::init(4, 1e-3, &mut rng).unwrap();
        let a = Supernet::new(&plan, alpha.clone(), &mut rng).unwrap();
        let mut b = Supernet::new(&plan, alpha, &mut rng).unwrap();
        assert_ne!(a.weights(), b.weights());
        assert_eq!(b.inherit(&a.store), a.store.len());
        assert_eq!(a.weights(), b.weights());
    }
}
