//! Trains one discrete network on synthetic data and scores a held-out set.

use egdarts::data::synth_dataset;
use egdarts::evo_search::{train_genome, TrainSettings};
use egdarts::network::{evaluate, NetworkGenome};
use egdarts::search_space::{CandidateOp, Gene, Genotype};

fn main() -> egdarts::Result<()> {
    let train = synth_dataset(0, 600, 4, 12)?;
    let test = synth_dataset(1, 300, 4, 12)?;
    let genes: Vec<Gene> = (2..6).flat_map(|j| [Gene(CandidateOp::SepConv3x3, 0), Gene(CandidateOp::SkipConnect, j - 1)]).collect();
    let genome = NetworkGenome::new([6, 1, 1, 1], [1.5, 1.5], &Genotype { normal: genes.clone(), reduce: genes, nodes: 7 });
    let settings = TrainSettings { epochs: 3, batch_size: 32, ..TrainSettings::default() };
    let t = train_genome(&genome, &train, &settings, 0)?;
    for (e, l) in t.train_losses.iter().enumerate() {
        println!("epoch {e}: loss {l:.4}");
    }
    let r = evaluate(&t.net, &t.store, &test, 64)?;
    println!("test loss {:.4}, accuracy {:.1}%", r.loss, r.accuracy * 100.0);
    Ok(())
}
