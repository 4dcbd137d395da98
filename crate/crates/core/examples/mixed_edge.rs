//! A relaxed edge: the softmax over twelve logits mixes the outputs of all
//! candidate operations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use egdarts::search_space::{mixed_edge_forward, CandidateOp, OpInstance};
use egdarts::tensor::{ParamStore, Session, Tensor};

fn main() -> egdarts::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let ops = CandidateOp::ALL
        .iter()
        .map(|&op| OpInstance::new(op, 4, 4, 1, &mut store, op.name(), &mut rng))
        .collect::<egdarts::Result<Vec<_>>>()?;
    let logits: Vec<f64> = (0..ops.len()).map(|_| rng.random_range(-1.0..1.0)).collect();

    let mut s = Session::new(&store);
    let x = s.graph.leaf(Tensor::randn(&[2, 4, 8, 8], 1.0, &mut rng), false);
    let alpha = s.graph.leaf(Tensor::new(vec![ops.len()], logits)?, true);
    let y = mixed_edge_forward(&mut s, x, alpha, &ops)?;
    let w = s.graph.softmax(alpha)?;

    for (op, wi) in CandidateOp::ALL.iter().zip(s.graph.value(w).data()) {
        println!("{:<14} {wi:.4}", op.name());
    }
    let loss = s.graph.sum(y);
    let grads = s.graph.backward(loss)?;
    println!("output shape {:?}", s.graph.shape(y));
    println!("d(sum)/d(alpha) = {:.4?}", grads.get_or_zeros(alpha));
    Ok(())
}
