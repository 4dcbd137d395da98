//! Progressive cell search on synthetic data: twelve ops per edge, pruned to
//! four, then one.
//!
//! `cargo run --release --example block_search`

use egdarts::block_search::{progressive_search_with, BlockSearchConfig, StagePlan};
use egdarts::data::synth_dataset;

fn main() -> egdarts::Result<()> {
    let data = synth_dataset(0, 400, 4, 8)?;
    let cfg = BlockSearchConfig {
        stages: vec![StagePlan { depth: 1, ops: 4 }, StagePlan { depth: 2, ops: 1 }],
        epochs: 2,
        batch_size: 32,
        node_channels: 4,
        max_steps_per_epoch: Some(6),
        ..BlockSearchConfig::default()
    };
    let out = progressive_search_with(&data, &cfg, 7, |r| {
        println!(
            "stage {} epoch {}  train {:.3}  val {:.3}  E[params] {:.0}",
            r.stage, r.epoch, r.train_loss, r.val_loss, r.expected_params
        );
    })?;
    let boosted = out.trace.iter().filter(|t| t.phi > 0.0).count();
    println!("{} arch steps, {boosted} enhanced", out.trace.len());
    println!("supernet accuracy on the alpha half: {:.1}%", out.val_accuracy * 100.0);
    println!("{}", out.genotype.to_json()?);
    Ok(())
}
