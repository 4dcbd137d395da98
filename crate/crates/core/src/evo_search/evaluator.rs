use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Augment, Dataset};
use crate::error::{Error, Result};
use crate::network::{evaluate, measure_latency_ms, train_epoch, CellNetwork, NetLayout, NetworkAnalytics, NetworkGenome};
use crate::tensor::{cosine_lr, ParamStore, SgdConfig, SgdState};

/// Objectives and analytics of one genome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Validation error in `[0, 1]`.
    pub err: f64,
    pub analytics: NetworkAnalytics,
    /// Training produced a non-finite loss; `err` is then 1.
    pub diverged: bool,
}

pub trait Evaluator {
    fn num_classes(&self) -> usize;

    fn input_hw(&self) -> (usize, usize);

    fn evaluate(&self, genome: &NetworkGenome, seed: u64) -> Result<Evaluation>;
}

/// Seed for one genome, independent of evaluation order.
pub fn genome_seed(master: u64, genome: &NetworkGenome) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(serde_json::to_vec(genome).expect("genome serializes"));
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Closed-form error `scale / (scale + params) + depth_penalty · |v1 − v3|`
/// clamped to `[0, 1]`; no training, for tests and dry runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateEvaluator {
    pub num_classes: usize,
    pub input_hw: (usize, usize),
    pub scale: f64,
    pub depth_penalty: f64,
}

impl Default for SurrogateEvaluator {
    fn default() -> Self {
        Self {
            num_classes: 10,
            input_hw: (32, 32),
            scale: 1e5,
            depth_penalty: 0.01,
        }
    }
}

impl Evaluator for SurrogateEvaluator {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn input_hw(&self) -> (usize, usize) {
        self.input_hw
    }

    fn evaluate(&self, genome: &NetworkGenome, _seed: u64) -> Result<Evaluation> {
        let analytics = genome.analytics(self.num_classes, self.input_hw)?;
        let base = self.scale / (self.scale + analytics.params as f64);
        let err = base + self.depth_penalty * (genome.v1 - genome.v3).abs() as f64;
        Ok(Evaluation {
            err: err.clamp(0.0, 1.0),
            analytics,
            diverged: false,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
    pub augment: Augment,
    /// Singles timed for latency; 0 skips the measurement.
    pub latency_runs: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            epochs: 36,
            batch_size: 128,
            sgd: SgdConfig {
                total_epochs: 36,
                ..SgdConfig::default()
            },
            augment: Augment::default(),
            latency_runs: 0,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::config(format!("{prefix}.batch_size"), "must be at least 2"));
        }
        self.sgd.validate(&format!("{prefix}.sgd"))
    }
}

/// Outcome of [`train_genome`].
#[derive(Debug, Clone)]
pub struct TrainedNetwork {
    pub net: CellNetwork,
    pub store: ParamStore,
    pub train_losses: Vec<f64>,
    pub diverged: bool,
}

/// Builds the genome's network and trains it with a cosine schedule over
/// `settings.epochs`. A non-finite loss stops training and sets `diverged`.
pub fn train_genome(
    genome: &NetworkGenome,
    train: &Dataset,
    settings: &TrainSettings,
    seed: u64,
) -> Result<TrainedNetwork> {
    let plan = genome.plan(train.num_classes, (train.height, train.width))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let g = genome.genotype();
    let net = CellNetwork::build(&plan, NetLayout::Discrete(&g), &mut store, &mut rng)?;
    let sgd = SgdConfig {
        total_epochs: settings.epochs,
        ..settings.sgd.clone()
    };
    let mut state = SgdState::new();
    let mut train_losses = Vec::new();
    let mut diverged = false;
    for epoch in 0..settings.epochs {
        let lr = cosine_lr(epoch, &sgd)?;
        match train_epoch(&net, &mut store, train, settings.batch_size, lr, &sgd, &mut state, &settings.augment, &mut rng) {
            Ok(l) => train_losses.push(l),
            Err(Error::Numeric(_)) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(TrainedNetwork {
        net,
        store,
        train_losses,
        diverged,
    })
}

/// Short training run on `train`, error measured on `val`.
#[derive(Debug, Clone)]
pub struct TrainedEvaluator {
    pub train: Dataset,
    pub val: Dataset,
    pub settings: TrainSettings,
}

impl Evaluator for TrainedEvaluator {
    fn num_classes(&self) -> usize {
        self.train.num_classes
    }

    fn input_hw(&self) -> (usize, usize) {
        (self.train.height, self.train.width)
    }

    fn evaluate(&self, genome: &NetworkGenome, seed: u64) -> Result<Evaluation> {
        let mut analytics = genome.analytics(self.num_classes(), self.input_hw())?;
        let t = train_genome(genome, &self.train, &self.settings, seed)?;
        if t.diverged {
            return Ok(Evaluation {
                err: 1.0,
                analytics,
                diverged: true,
            });
        }
        let r = evaluate(&t.net, &t.store, &self.val, self.settings.batch_size)?;
        if self.settings.latency_runs > 0 {
            analytics.latency_ms = Some(measure_latency_ms(&t.net, &t.store, self.settings.latency_runs)?);
        }
        Ok(Evaluation {
            err: 1.0 - r.accuracy,
            analytics,
            diverged: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dataset;
    use crate::search_space::{CandidateOp, Gene, Genotype};

    fn genome() -> NetworkGenome {
        let genes: Vec<Gene> = (2..6).flat_map(|j| [Gene(CandidateOp::SepConv3x3, 0), Gene(CandidateOp::SkipConnect, j - 1)]).collect();
        let g = Genotype { normal: genes.clone(), reduce: genes, nodes: 7 };
        NetworkGenome::new([4, 1, 1, 1], [1.0, 1.0], &g)
    }

    #[test]
    fn surrogate_is_pure_and_passes_params_through() {
        let s = SurrogateEvaluator::default();
        let g = genome();
        let first = s.evaluate(&g, 0).unwrap();
        for seed in 0..100 {
            assert_eq!(s.evaluate(&g, seed).unwrap(), first);
        }
        let plan = g.plan(10, (32, 32)).unwrap();
        assert_eq!(first.analytics.params, plan.params(&g.genotype()));
    }

    #[test]
    fn untrained_network_is_near_chance() {
        let data = synth_dataset(5, 400, 4, 8).unwrap();
        let ev = TrainedEvaluator {
            train: data.clone(),
            val: data,
            settings: TrainSettings { epochs: 0, ..TrainSettings::default() },
        };
        let e = ev.evaluate(&genome(), 1).unwrap();
        assert!((e.err - 0.75).abs() < 0.12, "{e:?}");
    }

    #[test]
    fn genome_seed_depends_on_genome() {
        let g = genome();
        let mut h = g.clone();
        h.v0 += 1;
        assert_eq!(genome_seed(3, &g), genome_seed(3, &g));
        assert_ne!(genome_seed(3, &g), genome_seed(3, &h));
        assert_ne!(genome_seed(3, &g), genome_seed(4, &g));
    }
}
