//! NSGA-II over the macro genome with the closed-form surrogate, then the
//! knee-point choice on the final front.

use egdarts::evo_search::{decide, evolve, EvoConfig, SurrogateEvaluator};
use egdarts::network::NetworkGenome;
use egdarts::search_space::{CandidateOp, Gene, Genotype};

fn main() -> egdarts::Result<()> {
    let normal: Vec<Gene> = (2..6).flat_map(|j| [Gene(CandidateOp::SepConv3x3, 0), Gene(CandidateOp::SkipConnect, j - 1)]).collect();
    let reduce: Vec<Gene> = (2..6).flat_map(|j| [Gene(CandidateOp::MaxPool3x3, 0), Gene(CandidateOp::DilConv5x5, j - 1)]).collect();
    let template = NetworkGenome::new([16, 2, 2, 2], [1.5, 1.5], &Genotype { normal, reduce, nodes: 7 });

    let out = evolve(&EvoConfig::default(), &template, &SurrogateEvaluator::default(), 42)?;
    for h in &out.history {
        println!("gen {:>2}  best err {:.4}  fewest params {:>8}  front {}", h.generation, h.best_err, h.best_params, h.front_size);
    }
    let points: Vec<(f64, f64)> = out.front.iter().map(|i| (i.analytics.params as f64, i.err * 100.0)).collect();
    let d = decide(&points)?;
    for (k, (i, dist)) in out.front.iter().zip(&d.distances).enumerate() {
        let g = &i.genome;
        let mark = if k == d.index { "  <- knee" } else { "" };
        println!(
            "{:>9} params {:6.2}% err  v=({},{},{},{},{:.2},{:.2})  d={dist:.4}{mark}",
            i.analytics.params, i.err * 100.0, g.v0, g.v1, g.v2, g.v3, g.v4, g.v5
        );
    }
    Ok(())
}
