use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bilevel::{apply_arch_update, arch_gradient, ArchMode};
use super::enhance::Enhancer;
use super::supernet::Supernet;
use crate::data::{shuffled_batches, split, Augment, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::network::NetworkPlan;
use crate::search_space::{derive_genotype, prune_ops, ArchParams, CandidateOp, Genotype};
use crate::tensor::{cosine_lr, SgdConfig};

/// Proxy depth of one stage and the op count per edge it leaves behind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StagePlan {
    pub depth: usize,
    pub ops: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlockSearchConfig {
    pub stages: Vec<StagePlan>,
    /// Epochs per stage.
    pub epochs: usize,
    pub batch_size: usize,
    pub arch_lr: f64,
    /// Step size of the one-step weight unroll.
    pub xi: f64,
    pub mode: ArchMode,
    /// Number of (complexity, loss) pairs in the fit window.
    pub window: usize,
    pub phi_cap: f64,
    pub warmup_steps: usize,
    pub enhance: bool,
    pub num_nodes: usize,
    pub node_channels: usize,
    pub alpha_noise: f64,
    pub sgd: SgdConfig,
    pub augment: Augment,
    pub split: SplitSpec,
    /// Caps the paired steps per epoch; `None` uses every batch.
    pub max_steps_per_epoch: Option<usize>,
}

impl Default for BlockSearchConfig {
    fn default() -> Self {
        Self {
            stages: vec![
                StagePlan { depth: 5, ops: 8 },
                StagePlan { depth: 11, ops: 4 },
                StagePlan { depth: 17, ops: 1 },
            ],
            epochs: 40,
            batch_size: 96,
            arch_lr: 0.025,
            xi: 0.025,
            mode: ArchMode::SecondOrder,
            window: 5,
            phi_cap: 10.0,
            warmup_steps: 5,
            enhance: true,
            num_nodes: 7,
            node_channels: 16,
            alpha_noise: 1e-3,
            sgd: SgdConfig::default(),
            augment: Augment::default(),
            split: SplitSpec::default(),
            max_steps_per_epoch: None,
        }
    }
}

impl BlockSearchConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let field = |f: &str| format!("{prefix}.{f}");
        if self.stages.is_empty() {
            return Err(Error::config(field("stages"), "at least one stage is required"));
        }
        let mut before = CandidateOp::ALL.len();
        for (i, s) in self.stages.iter().enumerate() {
            if s.depth == 0 {
                return Err(Error::config(field(&format!("stages[{i}].depth")), "must be at least 1"));
            }
            if s.ops == 0 || s.ops >= before {
                return Err(Error::config(
                    field(&format!("stages[{i}].ops")),
                    format!("must be below the previous count {before} and positive"),
                ));
            }
            before = s.ops;
        }
        if before != 1 {
            return Err(Error::config(field("stages"), "the last stage must keep one op per edge"));
        }
        if self.epochs == 0 {
            return Err(Error::config(field("epochs"), "must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::config(field("batch_size"), "must be at least 2"));
        }
        if !(self.arch_lr > 0.0 && self.arch_lr.is_finite()) {
            return Err(Error::config(field("arch_lr"), "must be > 0"));
        }
        if !(self.xi >= 0.0 && self.xi.is_finite()) {
            return Err(Error::config(field("xi"), "must be >= 0"));
        }
        if self.window < 2 {
            return Err(Error::config(field("window"), "must be at least 2"));
        }
        if !(self.phi_cap >= 0.0 && self.phi_cap.is_finite()) {
            return Err(Error::config(field("phi_cap"), "must be >= 0"));
        }
        if self.num_nodes < 3 {
            return Err(Error::config(field("num_nodes"), "must be at least 3"));
        }
        if self.node_channels == 0 {
            return Err(Error::config(field("node_channels"), "must be at least 1"));
        }
        if !(self.alpha_noise >= 0.0 && self.alpha_noise.is_finite()) {
            return Err(Error::config(field("alpha_noise"), "must be >= 0"));
        }
        if self.max_steps_per_epoch == Some(0) {
            return Err(Error::config(field("max_steps_per_epoch"), "must be at least 1"));
        }
        self.sgd.validate(&field("sgd"))?;
        self.split.validate()
    }
}

/// One architecture step as written to the trace file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub x_k: f64,
    pub y_k: f64,
    pub theta1: Option<f64>,
    pub grad_theta: Option<f64>,
    pub sigma: u8,
    pub phi: f64,
}

/// Reported after every epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochReport {
    pub stage: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub expected_params: f64,
}

#[derive(Debug, Clone)]
pub struct BlockSearchOutcome {
    pub genotype: Genotype,
    /// Alphas at the end of each stage, before pruning.
    pub stage_alphas: Vec<ArchParams>,
    pub trace: Vec<TraceRow>,
    /// Accuracy of the last supernet on the alpha half.
    pub val_accuracy: f64,
}

/// [`progressive_search_with`] without progress reports.
pub fn progressive_search(data: &Dataset, cfg: &BlockSearchConfig, seed: u64) -> Result<BlockSearchOutcome> {
    progressive_search_with(data, cfg, seed, |_| {})
}

/// Stage-wise search on a stratified split of `data`. Every stage builds a
/// proxy of its depth over the surviving ops, alternates a weight step on
/// the weight half with an architecture step on the alpha half, then prunes
/// to the stage's op count; the last stage takes the top op per edge.
pub fn progressive_search_with(
    data: &Dataset,
    cfg: &BlockSearchConfig,
    seed: u64,
    mut progress: impl FnMut(&EpochReport),
) -> Result<BlockSearchOutcome> {
    cfg.validate("block_search")?;
    let (weight_set, alpha_set) = split(data, &cfg.split)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut alpha = ArchParams::init(cfg.num_nodes, cfg.alpha_noise, &mut rng)?;
    let mut enhancer = Enhancer::new(cfg.window, cfg.phi_cap, cfg.warmup_steps, cfg.enhance);
    let mut trace = Vec::new();
    let mut stage_alphas = Vec::new();
    let mut previous: Option<Supernet> = None;
    let sgd = SgdConfig {
        total_epochs: cfg.epochs,
        ..cfg.sgd.clone()
    };
    let mut genotype = None;
    let mut val_accuracy = 0.0;

    for (si, stage) in cfg.stages.iter().enumerate() {
        let plan = NetworkPlan::proxy(
            (data.height, data.width),
            stage.depth,
            cfg.node_channels,
            cfg.num_nodes,
            data.num_classes,
        )?;
        let mut net = Supernet::new(&plan, alpha.clone(), &mut rng)?;
        if let Some(prev) = &previous {
            net.inherit(&prev.store);
        }
        enhancer.reset();
        for epoch in 0..cfg.epochs {
            let lr = cosine_lr(epoch, &sgd)?;
            let wb = shuffled_batches(weight_set.len(), cfg.batch_size, &mut rng);
            let vb = shuffled_batches(alpha_set.len(), cfg.batch_size, &mut rng);
            let steps = wb.len().min(vb.len()).min(cfg.max_steps_per_epoch.unwrap_or(usize::MAX));
            let (mut tl, mut vl) = (0.0, 0.0);
            for k in 0..steps {
                let tb = weight_set.batch(&wb[k], Some((&cfg.augment, &mut rng)));
                let vbatch = alpha_set.batch::<ChaCha8Rng>(&vb[k], None);
                tl += net.weight_step(&tb, lr, &sgd)?;

                let mut flat = net.alpha.flatten();
                let g = arch_gradient(&mut net, &flat, &tb, &vbatch, cfg.mode, cfg.xi)?;
                let x = net.expected_complexity();
                let rec = enhancer.observe(x, g.val_loss);
                apply_arch_update(&mut flat, &g.grad, cfg.arch_lr, rec.phi)?;
                net.alpha.assign_flat(&flat)?;
                vl += g.val_loss;
                trace.push(TraceRow {
                    step: trace.len(),
                    x_k: x,
                    y_k: g.val_loss,
                    theta1: rec.theta1,
                    grad_theta: rec.grad_theta,
                    sigma: rec.sigma,
                    phi: rec.phi,
                });
            }
            let n = steps.max(1) as f64;
            progress(&EpochReport {
                stage: si,
                epoch,
                train_loss: tl / n,
                val_loss: vl / n,
                expected_params: net.expected_complexity(),
            });
        }
        alpha = net.alpha.clone();
        stage_alphas.push(alpha.clone());
        let before = alpha.ops_per_edge().expect("uniform op count");
        if stage.ops == 1 {
            genotype = Some(derive_genotype(&alpha)?);
            val_accuracy = net.accuracy(&alpha_set, cfg.batch_size)?;
        } else {
            alpha = prune_ops(&alpha, before - stage.ops)?;
        }
        previous = Some(net);
    }
    Ok(BlockSearchOutcome {
        genotype: genotype.expect("validated plan ends at one op"),
        stage_alphas,
        trace,
        val_accuracy,
    })
}

pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for row in r.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}
