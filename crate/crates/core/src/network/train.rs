use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::CellNetwork;
use crate::data::{shuffled_batches, Augment, Dataset};
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, SgdConfig, SgdState, Session, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub loss: f64,
    pub accuracy: f64,
}

/// One pass of SGD over `data` at a fixed learning rate. Returns the mean
/// training loss.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch<R: Rng + ?Sized>(
    net: &CellNetwork,
    store: &mut ParamStore,
    data: &Dataset,
    batch_size: usize,
    lr: f64,
    cfg: &SgdConfig,
    state: &mut SgdState,
    augment: &Augment,
    rng: &mut R,
) -> Result<f64> {
    if net.is_mixed() {
        return Err(Error::InvalidArgument("train_epoch expects a discrete network".into()));
    }
    let mut total = 0.0;
    let mut seen = 0usize;
    for idx in shuffled_batches(data.len(), batch_size, rng) {
        let batch = data.batch(&idx, Some((augment, &mut *rng)));
        let (loss, grads) = {
            let mut s = Session::new(store);
            let x = s.graph.leaf(batch.images, false);
            let logits = net.forward(&mut s, x, None)?;
            let loss = s.graph.cross_entropy(logits, &batch.labels)?;
            let value = s.graph.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Numeric(format!("training loss is {value}")));
            }
            let g = s.graph.backward(loss)?;
            (value, s.param_grads(&g))
        };
        store.sgd_step(&grads, lr, cfg, state)?;
        total += loss * idx.len() as f64;
        seen += idx.len();
    }
    Ok(if seen == 0 { 0.0 } else { total / seen as f64 })
}

/// Mean loss and accuracy over `data` in consecutive batches. Batch norm
/// uses the statistics of each evaluation batch.
pub fn evaluate(net: &CellNetwork, store: &ParamStore, data: &Dataset, batch_size: usize) -> Result<EvalResult> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    let n = data.len();
    if n == 0 {
        return Err(Error::InvalidArgument("cannot evaluate on an empty dataset".into()));
    }
    for idx in data.sequential_batches(batch_size.max(2)) {
        let batch = data.batch::<rand_chacha::ChaCha8Rng>(&idx, None);
        let mut s = Session::new(store);
        let x = s.graph.leaf(batch.images, false);
        let logits = net.forward(&mut s, x, None)?;
        let l = s.graph.cross_entropy(logits, &batch.labels)?;
        loss += s.graph.value(l).data()[0] * idx.len() as f64;
        let k = data.num_classes;
        let values = s.graph.value(logits).data();
        for (row, &label) in values.chunks(k).zip(&batch.labels) {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            correct += usize::from(best == label);
        }
    }
    Ok(EvalResult {
        loss: loss / n as f64,
        accuracy: correct as f64 / n as f64,
    })
}

/// Mean wall-clock milliseconds of `runs` single-image forward passes.
pub fn measure_latency_ms(net: &CellNetwork, store: &ParamStore, runs: usize) -> Result<f64> {
    let (h, w) = net.plan.input_hw;
    let image = Tensor::full(&[1, 3, h, w], 0.5);
    let start = Instant::now();
    for _ in 0..runs.max(1) {
        let mut s = Session::new(store);
        let x = s.graph.leaf(image.clone(), false);
        net.forward(&mut s, x, None)?;
    }
    Ok(start.elapsed().as_secs_f64() * 1e3 / runs.max(1) as f64)
}
