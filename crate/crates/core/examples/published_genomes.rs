//! Builds a few published macro genomes at 32x32 and prints their size,
//! depth and multiply-accumulate count.

use egdarts::network::NetworkGenome;
use egdarts::search_space::{CandidateOp, Gene, Genotype};

const ROWS: [([i64; 4], [f64; 2]); 5] = [
    ([50, 6, 2, 2], [2.50, 1.52]),
    ([50, 6, 2, 3], [1.20, 1.09]),
    ([9, 6, 4, 4], [2.33, 1.28]),
    ([48, 6, 3, 4], [1.12, 2.38]),
    ([8, 2, 2, 2], [1.83, 1.12]),
];

fn main() -> egdarts::Result<()> {
    let normal: Vec<Gene> = (2..6).flat_map(|j| [Gene(CandidateOp::SepConv3x3, 0), Gene(CandidateOp::Lbcnn3x3, j - 1)]).collect();
    let reduce: Vec<Gene> = (2..6).flat_map(|j| [Gene(CandidateOp::AvgPool3x3, 0), Gene(CandidateOp::EcaNet3x3, j - 1)]).collect();
    let cells = Genotype { normal, reduce, nodes: 7 };
    for (v, r) in ROWS {
        let g = NetworkGenome::new(v, r, &cells);
        let a = g.analytics(10, (32, 32))?;
        println!(
            "v={v:?} r={r:?}  channels {:?}  depth {:>2}  params {:>9}  MACs {:>12}",
            g.channels(),
            a.depth,
            a.params,
            a.flops
        );
    }
    Ok(())
}
