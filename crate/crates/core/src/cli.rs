//! Command-line front end: argument parsing, artifact layout and run
//! manifests. The binary only parses arguments and maps errors to exit codes.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::block_search::{progressive_search_with, write_trace_csv};
use crate::config::{DatasetKind, EvaluatorKind, RunConfig};
use crate::data::{CifarPart, Dataset};
use crate::error::{Error, Result};
use crate::evo_search::{
    decide, evolve_with, read_pareto_csv, train_genome, write_pareto_csv, Evaluator, ParetoRow, SurrogateEvaluator,
    TrainedEvaluator,
};
use crate::network::{evaluate, measure_latency_ms, CellNetwork, NetLayout, NetworkAnalytics, NetworkGenome};
use crate::search_space::Genotype;
use crate::tensor::ParamStore;

/// Single-image forward passes averaged for `eval --latency`.
pub const LATENCY_RUNS: usize = 1000;

#[derive(Debug, Parser)]
#[command(name = "egdarts", version, about = "Two-stage multi-objective architecture search")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// cifar10, cifar100 or synth.
    #[arg(long)]
    pub dataset: Option<DatasetKind>,
    /// trained or surrogate.
    #[arg(long)]
    pub evaluator: Option<EvaluatorKind>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Differentiable cell search; writes genotype.json and trace.csv.
    SearchBlocks(Common),
    /// Macro search over the six genome variables; writes pareto.csv and genomes/.
    SearchNetwork {
        #[command(flatten)]
        common: Common,
        /// Cells to stack; defaults to `<out>/genotype.json`.
        #[arg(long)]
        genotype: Option<PathBuf>,
    },
    /// Knee-point choice on a front; writes decision.json.
    Decide {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/pareto.csv`.
        #[arg(long)]
        pareto: Option<PathBuf>,
        /// Exit with code 4 when no member lies below the chord or the front
        /// has a single member.
        #[arg(long)]
        strict: bool,
    },
    /// Trains one genome; writes weights.bin and train_metrics.json.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        genome: PathBuf,
    },
    /// Scores one genome on the test split; writes eval_metrics.json.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        genome: PathBuf,
        /// Checkpoint from `train` (built with the same seed); untrained
        /// weights when omitted.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Also time single-image inference.
        #[arg(long)]
        latency: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SearchBlocks(_) => "search-blocks",
            Command::SearchNetwork { .. } => "search-network",
            Command::Decide { .. } => "decide",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::SearchBlocks(c) => c,
            Command::SearchNetwork { common, .. }
            | Command::Decide { common, .. }
            | Command::Train { common, .. }
            | Command::Eval { common, .. } => common,
        }
    }
}

/// Written next to the artifacts of every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub timestamp_unix: u64,
    pub artifacts: Vec<String>,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceRow {
    pub index: usize,
    pub params: usize,
    pub err_pct: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionReport {
    pub index: usize,
    pub selected: ParetoRow,
    /// Coefficients of `a·params + err_pct + b = 0`; absent for a
    /// single-member front.
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub anchor_tie_break: bool,
    pub distances: Vec<DistanceRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitMetrics {
    pub err: f64,
    pub accuracy: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainMetrics {
    pub seed: u64,
    pub epochs: usize,
    pub train_losses: Vec<f64>,
    pub diverged: bool,
    pub analytics: NetworkAnalytics,
    /// Absent after divergence.
    pub test: Option<SplitMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalMetrics {
    pub err: f64,
    pub accuracy: f64,
    pub loss: f64,
    pub params: usize,
    pub flops: u64,
    pub depth: usize,
    pub latency_ms: Option<f64>,
}

/// Effective configuration: file (or defaults) with command-line overrides.
pub fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    if let Some(d) = common.dataset {
        cfg.dataset.kind = d;
    }
    if let Some(e) = common.evaluator {
        cfg.evaluator.kind = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_text(p: &Path, text: &str) -> Result<()> {
    std::fs::write(p, text).map_err(|e| Error::io(p, e))
}

/// Reads an input artifact; a missing file is a data error.
fn read_input(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).map_err(|e| Error::Data {
        path: p.to_path_buf(),
        reason: e.to_string(),
    })
}

fn parse_input<T>(p: &Path, parse: impl FnOnce(&str) -> Result<T>) -> Result<T> {
    parse(&read_input(p)?).map_err(|e| match e {
        Error::Json(j) => Error::Format {
            path: p.to_path_buf(),
            offset: 0,
            reason: j.to_string(),
        },
        other => other,
    })
}

fn write_manifest(cfg: &RunConfig, command: &str, artifacts: &[&str]) -> Result<()> {
    let m = RunManifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config_sha256: cfg.hash()?,
        timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        artifacts: artifacts.iter().map(|s| s.to_string()).collect(),
        config: cfg.clone(),
    };
    let path = cfg.out_dir.join(format!("{command}.manifest.json"));
    write_text(&path, &serde_json::to_string_pretty(&m)?)
}

/// Classes and image size without loading pixels where possible.
fn data_shape(cfg: &RunConfig) -> (usize, (usize, usize)) {
    match cfg.dataset.kind {
        DatasetKind::Synth => (cfg.dataset.synth.classes, (cfg.dataset.synth.size, cfg.dataset.synth.size)),
        DatasetKind::Cifar10 => (10, (32, 32)),
        DatasetKind::Cifar100 => (100, (32, 32)),
    }
}

fn search_blocks(cfg: &RunConfig) -> Result<Vec<&'static str>> {
    let train = cfg.dataset.load(CifarPart::Train)?;
    let out = progressive_search_with(&train, &cfg.block_search, cfg.seed, |r| {
        eprintln!(
            "stage {} epoch {}: train loss {:.4}, val loss {:.4}, expected params {:.0}",
            r.stage, r.epoch, r.train_loss, r.val_loss, r.expected_params
        );
    })?;
    write_text(&cfg.out_dir.join("genotype.json"), &out.genotype.to_json()?)?;
    write_trace_csv(&cfg.out_dir.join("trace.csv"), &out.trace)?;
    write_text(&cfg.out_dir.join("alphas.json"), &serde_json::to_string_pretty(&out.stage_alphas)?)?;
    println!("{}", out.genotype.to_json()?);
    Ok(vec!["genotype.json", "trace.csv", "alphas.json"])
}

fn search_network(cfg: &RunConfig, genotype: &Path) -> Result<Vec<&'static str>> {
    let g = parse_input(genotype, Genotype::from_json)?;
    let lo = cfg.evolution.bounds;
    let template = NetworkGenome::new([lo.v0.0, lo.v1.0, lo.v2.0, lo.v3.0], [lo.v4.0, lo.v5.0], &g);
    let evaluator: Box<dyn Evaluator> = match cfg.evaluator.kind {
        EvaluatorKind::Surrogate => {
            let (num_classes, input_hw) = data_shape(cfg);
            Box::new(SurrogateEvaluator {
                num_classes,
                input_hw,
                scale: cfg.evaluator.surrogate_scale,
                depth_penalty: cfg.evaluator.surrogate_depth_penalty,
            })
        }
        EvaluatorKind::Trained => {
            let train = cfg.dataset.load(CifarPart::Train)?;
            let (fit, score) = cfg.evaluator_split(&train)?;
            Box::new(TrainedEvaluator {
                train: fit,
                val: score,
                settings: cfg.evaluator.train.clone(),
            })
        }
    };
    let out = evolve_with(&cfg.evolution, &template, evaluator.as_ref(), cfg.seed, |s| {
        eprintln!(
            "generation {}: best err {:.4}, fewest params {}, front {}, evaluations {}",
            s.generation, s.best_err, s.best_params, s.front_size, s.evaluations
        );
    })?;
    let rows: Vec<ParetoRow> = out.front.iter().map(ParetoRow::from).collect();
    write_pareto_csv(&cfg.out_dir.join("pareto.csv"), &rows)?;
    let dir = cfg.out_dir.join("genomes");
    if dir.is_dir() {
        std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    create_dir(&dir)?;
    for (i, ind) in out.front.iter().enumerate() {
        write_text(&dir.join(genome_file(i)), &ind.genome.to_json()?)?;
    }
    let mut w = csv::Writer::from_path(cfg.out_dir.join("generations.csv"))?;
    for h in &out.history {
        w.serialize(h)?;
    }
    w.flush().map_err(|e| Error::io(cfg.out_dir.join("generations.csv"), e))?;
    Ok(vec!["pareto.csv", "genomes", "generations.csv"])
}

/// Name of the genome file for front row `i`.
pub fn genome_file(i: usize) -> String {
    format!("genome_{i:03}.json")
}

fn run_decide(cfg: &RunConfig, pareto: &Path, strict: bool) -> Result<Vec<&'static str>> {
    let rows = read_pareto_csv(pareto)?;
    if strict && rows.len() == 1 {
        return Err(Error::DegenerateFront("the front has a single member".into()));
    }
    let report = if rows.len() == 1 {
        // nothing to trade off: the only non-dominated genome is the answer
        DecisionReport {
            index: 0,
            selected: rows[0],
            a: None,
            b: None,
            anchor_tie_break: true,
            distances: vec![DistanceRow {
                index: 0,
                params: rows[0].params,
                err_pct: rows[0].err_pct,
                distance: 0.0,
            }],
        }
    } else {
        let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.params as f64, r.err_pct)).collect();
        let d = decide(&points)?;
        if strict && d.anchor_tie_break {
            return Err(Error::DegenerateFront("no member lies below the chord between the anchors".into()));
        }
        DecisionReport {
            index: d.index,
            selected: rows[d.index],
            a: Some(d.line.a),
            b: Some(d.line.b),
            anchor_tie_break: d.anchor_tie_break,
            distances: rows
                .iter()
                .zip(&d.distances)
                .enumerate()
                .map(|(index, (r, &distance))| DistanceRow {
                    index,
                    params: r.params,
                    err_pct: r.err_pct,
                    distance,
                })
                .collect(),
        }
    };
    println!("{:>5} {:>12} {:>9} {:>12}", "row", "params", "err_pct", "distance");
    for r in &report.distances {
        let mark = if r.index == report.index { " *" } else { "" };
        println!("{:>5} {:>12} {:>9.3} {:>12.6}{mark}", r.index, r.params, r.err_pct, r.distance);
    }
    write_text(&cfg.out_dir.join("decision.json"), &serde_json::to_string_pretty(&report)?)?;
    let mut artifacts = vec!["decision.json"];
    let genome = pareto.parent().unwrap_or(Path::new(".")).join("genomes").join(genome_file(report.index));
    if genome.is_file() {
        write_text(&cfg.out_dir.join("selected_genome.json"), &read_input(&genome)?)?;
        artifacts.push("selected_genome.json");
    }
    Ok(artifacts)
}

fn load_genome(cfg: &RunConfig, path: &Path) -> Result<NetworkGenome> {
    let g = parse_input(path, NetworkGenome::from_json)?;
    g.validate(&cfg.evolution.bounds)?;
    Ok(g)
}

fn split_metrics(net: &CellNetwork, store: &ParamStore, data: &Dataset, batch: usize) -> Result<SplitMetrics> {
    let r = evaluate(net, store, data, batch)?;
    Ok(SplitMetrics {
        err: 1.0 - r.accuracy,
        accuracy: r.accuracy,
        loss: r.loss,
    })
}

fn run_train(cfg: &RunConfig, genome: &Path) -> Result<Vec<&'static str>> {
    let g = load_genome(cfg, genome)?;
    let train = cfg.dataset.load(CifarPart::Train)?;
    let test = cfg.dataset.load(CifarPart::Test)?;
    let t = train_genome(&g, &train, &cfg.train, cfg.seed)?;
    for (e, l) in t.train_losses.iter().enumerate() {
        eprintln!("epoch {e}: train loss {l:.4}");
    }
    let test_metrics = if t.diverged {
        None
    } else {
        Some(split_metrics(&t.net, &t.store, &test, cfg.train.batch_size)?)
    };
    t.store.save_checkpoint(&cfg.out_dir.join("weights.bin"))?;
    let m = TrainMetrics {
        seed: cfg.seed,
        epochs: cfg.train.epochs,
        train_losses: t.train_losses,
        diverged: t.diverged,
        analytics: g.analytics(train.num_classes, (train.height, train.width))?,
        test: test_metrics,
    };
    write_text(&cfg.out_dir.join("train_metrics.json"), &serde_json::to_string_pretty(&m)?)?;
    println!("{}", serde_json::to_string_pretty(&m)?);
    Ok(vec!["weights.bin", "train_metrics.json"])
}

fn run_eval(cfg: &RunConfig, genome: &Path, weights: Option<&Path>, latency: bool) -> Result<Vec<&'static str>> {
    let g = load_genome(cfg, genome)?;
    let test = cfg.dataset.load(CifarPart::Test)?;
    let plan = g.plan(test.num_classes, (test.height, test.width))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let genotype = g.genotype();
    let net = CellNetwork::build(&plan, NetLayout::Discrete(&genotype), &mut store, &mut rng)?;
    if let Some(w) = weights {
        store.load_checkpoint(w)?;
    }
    let s = split_metrics(&net, &store, &test, cfg.train.batch_size)?;
    let a = g.analytics(test.num_classes, (test.height, test.width))?;
    let m = EvalMetrics {
        err: s.err,
        accuracy: s.accuracy,
        loss: s.loss,
        params: a.params,
        flops: a.flops,
        depth: a.depth,
        latency_ms: if latency {
            Some(measure_latency_ms(&net, &store, LATENCY_RUNS)?)
        } else {
            None
        },
    };
    write_text(&cfg.out_dir.join("eval_metrics.json"), &serde_json::to_string_pretty(&m)?)?;
    println!("{}", serde_json::to_string_pretty(&m)?);
    Ok(vec!["eval_metrics.json"])
}

/// Runs one command and writes its manifest.
pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli.command.common())?;
    create_dir(&cfg.out_dir)?;
    let artifacts = match &cli.command {
        Command::SearchBlocks(_) => search_blocks(&cfg)?,
        Command::SearchNetwork { genotype, .. } => {
            let p = genotype.clone().unwrap_or_else(|| cfg.out_dir.join("genotype.json"));
            search_network(&cfg, &p)?
        }
        Command::Decide { pareto, strict, .. } => {
            let p = pareto.clone().unwrap_or_else(|| cfg.out_dir.join("pareto.csv"));
            run_decide(&cfg, &p, *strict || cfg.decide.strict)?
        }
        Command::Train { genome, .. } => run_train(&cfg, genome)?,
        Command::Eval {
            genome, weights, latency, ..
        } => run_eval(&cfg, genome, weights.as_deref(), *latency)?,
    };
    write_manifest(&cfg, cli.command.name(), &artifacts)
}
