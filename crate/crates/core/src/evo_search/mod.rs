//! Multi-objective evolution of the macro genome (error vs. parameter
//! count) and the knee-point decision on the resulting front.

pub mod decide;
pub mod evaluator;
pub mod nsga;
pub mod operators;
pub mod pareto;

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use decide::{decide, decide_with, Decision, DecisionLine, Denominator};
pub use evaluator::{genome_seed, train_genome, Evaluation, Evaluator, SurrogateEvaluator, TrainSettings, TrainedEvaluator, TrainedNetwork};
pub use nsga::{crowding_distance, dominates, fast_nondominated_sort, hypervolume_2d, rank_and_crowd, select_survivors};
pub use operators::{make_offspring, random_genome};
pub use pareto::{read_pareto_csv, write_pareto_csv, ParetoRow};

use crate::error::{Error, Result};
use crate::network::{GenomeBounds, NetworkAnalytics, NetworkGenome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvoConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub bounds: GenomeBounds,
}

impl Default for EvoConfig {
    fn default() -> Self {
        Self {
            population: 15,
            generations: 20,
            crossover_prob: 0.9,
            mutation_prob: 0.1,
            bounds: GenomeBounds::default(),
        }
    }
}

impl EvoConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if self.population < 2 {
            return Err(Error::config(format!("{prefix}.population"), "must be at least 2"));
        }
        for (name, p) in [("crossover_prob", self.crossover_prob), ("mutation_prob", self.mutation_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{prefix}.{name}"), "must lie in [0, 1]"));
            }
        }
        self.bounds.validate(&format!("{prefix}.bounds"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub genome: NetworkGenome,
    pub err: f64,
    pub analytics: NetworkAnalytics,
    /// 1 is the non-dominated front.
    pub rank: usize,
    pub crowding: f64,
    /// Training diverged or evaluation failed; `err` is 1.
    pub failed: bool,
}

impl Individual {
    /// `[error, parameter count]`, both minimized.
    pub fn objectives(&self) -> [f64; 2] {
        [self.err, self.analytics.params as f64]
    }
}

/// Best value of each objective in one generation's population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub population: usize,
    pub best_err: f64,
    pub best_params: usize,
    pub front_size: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone)]
pub struct EvoOutcome {
    /// First front of the final population with one member per objective
    /// vector, by ascending params then error.
    pub front: Vec<Individual>,
    pub population: Vec<Individual>,
    pub history: Vec<GenerationStats>,
}

/// Memoizes evaluations by genome so repeated genomes cost nothing.
struct CachedEval<'a, E: Evaluator + ?Sized> {
    inner: &'a E,
    seed: u64,
    cache: HashMap<String, Evaluation>,
    calls: usize,
}

impl<E: Evaluator + ?Sized> CachedEval<'_, E> {
    fn individual(&mut self, genome: NetworkGenome) -> Result<Individual> {
        let key = serde_json::to_string(&genome)?;
        let ev = match self.cache.get(&key) {
            Some(e) => *e,
            None => {
                self.calls += 1;
                let e = match self.inner.evaluate(&genome, genome_seed(self.seed, &genome)) {
                    Ok(e) => e,
                    Err(err @ (Error::Io { .. } | Error::Data { .. })) => return Err(err),
                    Err(_) => Evaluation {
                        err: 1.0,
                        analytics: genome.analytics(self.inner.num_classes(), self.inner.input_hw())?,
                        diverged: true,
                    },
                };
                self.cache.insert(key, e);
                e
            }
        };
        Ok(Individual {
            genome,
            err: ev.err,
            analytics: ev.analytics,
            rank: 0,
            crowding: 0.0,
            failed: ev.diverged,
        })
    }
}

fn assign_ranks(pop: &mut [Individual]) {
    let objs: Vec<[f64; 2]> = pop.iter().map(Individual::objectives).collect();
    let (rank, crowd) = rank_and_crowd(&objs);
    for (ind, (r, c)) in pop.iter_mut().zip(rank.into_iter().zip(crowd)) {
        ind.rank = r;
        ind.crowding = c;
    }
}

fn stats(generation: usize, pop: &[Individual], evaluations: usize) -> GenerationStats {
    GenerationStats {
        generation,
        population: pop.len(),
        best_err: pop.iter().map(|i| i.err).fold(f64::INFINITY, f64::min),
        best_params: pop.iter().map(|i| i.analytics.params).min().unwrap_or(0),
        front_size: pop.iter().filter(|i| i.rank == 1).count(),
        evaluations,
    }
}

/// [`evolve_with`] without progress reports.
pub fn evolve<E: Evaluator + ?Sized>(cfg: &EvoConfig, template: &NetworkGenome, evaluator: &E, seed: u64) -> Result<EvoOutcome> {
    evolve_with(cfg, template, evaluator, seed, |_| {})
}

/// Elitist evolution: a random population of `cfg.population` genomes
/// sharing the cells of `template`, then `cfg.generations` rounds of
/// offspring creation and truncation of parents plus offspring back to the
/// population size. Evaluation failures are recorded with error 1.
pub fn evolve_with<E: Evaluator + ?Sized>(
    cfg: &EvoConfig,
    template: &NetworkGenome,
    evaluator: &E,
    seed: u64,
    mut progress: impl FnMut(&GenerationStats),
) -> Result<EvoOutcome> {
    cfg.validate("evolution")?;
    template.genotype().validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eval = CachedEval {
        inner: evaluator,
        seed,
        cache: HashMap::new(),
        calls: 0,
    };
    let mut pop = Vec::with_capacity(cfg.population);
    for _ in 0..cfg.population {
        pop.push(eval.individual(random_genome(template, &cfg.bounds, &mut rng))?);
    }
    assign_ranks(&mut pop);
    let mut history = vec![stats(0, &pop, eval.calls)];
    progress(&history[0]);

    for generation in 1..=cfg.generations {
        let genomes: Vec<NetworkGenome> = pop.iter().map(|i| i.genome.clone()).collect();
        let rank: Vec<usize> = pop.iter().map(|i| i.rank).collect();
        let crowd: Vec<f64> = pop.iter().map(|i| i.crowding).collect();
        let kids = make_offspring(
            &genomes,
            &rank,
            &crowd,
            cfg.population,
            cfg.crossover_prob,
            cfg.mutation_prob,
            &cfg.bounds,
            &mut rng,
        );
        let mut combined = pop;
        for k in kids {
            combined.push(eval.individual(k)?);
        }
        let objs: Vec<[f64; 2]> = combined.iter().map(Individual::objectives).collect();
        let keep = select_survivors(&objs, cfg.population);
        pop = keep.into_iter().map(|i| combined[i].clone()).collect();
        assign_ranks(&mut pop);
        history.push(stats(generation, &pop, eval.calls));
        progress(history.last().expect("pushed"));
    }

    let mut front: Vec<Individual> = pop.iter().filter(|i| i.rank == 1).cloned().collect();
    front.sort_by(|a, b| {
        a.analytics
            .params
            .cmp(&b.analytics.params)
            .then(a.err.total_cmp(&b.err))
    });
    // one member per objective vector; the earliest in population order wins
    let mut seen = Vec::new();
    front.retain(|i| {
        let key = i.objectives().map(f64::to_bits);
        let fresh = !seen.contains(&key);
        seen.push(key);
        fresh
    });
    Ok(EvoOutcome {
        front,
        population: pop,
        history,
    })
}
