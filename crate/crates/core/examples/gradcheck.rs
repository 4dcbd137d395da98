//! Finite-difference check of every candidate operation's backward pass.
//!
//! `cargo run --release --example gradcheck`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use egdarts::search_space::{CandidateOp, OpInstance};
use egdarts::tensor::gradcheck::check_gradients;
use egdarts::tensor::{ParamStore, Tensor};

fn main() -> egdarts::Result<()> {
    for op in CandidateOp::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let inst = OpInstance::new(op, 3, 3, 1, &mut store, "op", &mut rng)?;
        let x = Tensor::randn(&[2, 3, 6, 6], 1.0, &mut rng);
        let probe = Tensor::randn(&[2, 3, 6, 6], 1.0, &mut rng);
        let report = check_gradients(&store, &[x], 1e-5, |s, v| {
            let y = inst.forward(s, v[0])?;
            let p = s.graph.constant(probe.clone());
            let yp = s.graph.mul(y, p)?;
            Ok(s.graph.sum(yp))
        })?;
        println!("{:<14} {:>5} entries  max rel err {:.2e}", op.name(), report.checked, report.max_rel_error);
    }
    Ok(())
}
