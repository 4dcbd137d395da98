//! Acceptance suite. Every criterion runs in sequence inside one test so that
//! the wall-clock budgets are measured without contention, and each prints a
//! single PASS/FAIL line to stderr (written directly, so it survives output
//! capture).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use egdarts::block_search::{
    apply_arch_update, fit_theta1, mixed_hvp_fd, phi, progressive_search, sigma, Bilevel, BlockSearchConfig,
    ComplexityLossHistory, Enhancer, LossGrads,
};
use egdarts::cli::{run, Cli};
use egdarts::config::RunConfig;
use egdarts::data::synth_dataset;
use egdarts::evo_search::{
    crowding_distance, decide_with, dominates, evolve_with, fast_nondominated_sort, read_pareto_csv,
    Denominator, EvoConfig, SurrogateEvaluator,
};
use egdarts::network::{CellNetwork, Classifier, GenomeBounds, NetLayout, NetworkGenome, NetworkPlan, Stem};
use egdarts::search_space::{mixed_edge_forward, CandidateOp, Gene, Genotype, OpInstance};
use egdarts::tensor::gradcheck::check_gradients;
use egdarts::tensor::{ParamStore, Session, Tensor, Var};
use egdarts::Result;

struct Outcome {
    id: usize,
    pass: bool,
    detail: String,
}

fn emit(o: &Outcome) {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr();
    let _ = writeln!(err, "{tag} criterion {}: {}", o.id, o.detail);
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn project(s: &mut Session<'_>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let r = s.graph.constant(Tensor::randn(s.graph.shape(y), 1.0, &mut rng));
    let p = s.graph.mul(y, r)?;
    Ok(s.graph.sum(p))
}

fn autodiff() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut track = |label: String, err: f64| {
        if err > worst.0 || worst.1.is_empty() {
            worst = (err.max(worst.0), label);
        }
    };
    let c = 3;
    for op in CandidateOp::ALL {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let stride = 1 + (seed % 2) as usize;
            let mut store = ParamStore::new();
            let inst = OpInstance::new(op, c, c, stride, &mut store, "op", &mut rng).unwrap();
            let x = Tensor::randn(&[2, c, 5, 5], 1.0, &mut rng);
            let r = check_gradients(&store, &[x], 1e-5, |s, v| {
                let y = inst.forward(s, v[0])?;
                project(s, y, seed)
            })
            .unwrap();
            track(format!("{op} seed {seed}"), r.max_rel_error);
        }
    }
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let stem = Stem::new(4, &mut store, &mut rng);
        let x = Tensor::randn(&[2, 3, 6, 6], 1.0, &mut rng);
        let r = check_gradients(&store, &[x], 1e-5, |s, v| {
            let y = stem.forward(s, v[0])?;
            project(s, y, seed)
        })
        .unwrap();
        track(format!("stem seed {seed}"), r.max_rel_error);

        let mut store = ParamStore::new();
        let head = Classifier::new(4, 5, &mut store, &mut rng);
        let x = Tensor::randn(&[3, 4, 3, 3], 1.0, &mut rng);
        let labels = [seed as usize % 5, 1, 4];
        let r = check_gradients(&store, &[x], 1e-5, |s, v| {
            let logits = head.forward(s, v[0])?;
            s.graph.cross_entropy(logits, &labels)
        })
        .unwrap();
        track(format!("classifier seed {seed}"), r.max_rel_error);
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        id: 1,
        pass: worst.0 < 1e-4 && secs < 60.0,
        detail: format!("max rel error {:.2e} ({}) over 14 modules x 20 seeds in {secs:.1}s", worst.0, worst.1),
    }
}

fn relaxation() -> Outcome {
    let mut max_diff = 0.0f64;
    let mut max_sum_err = 0.0f64;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stride = 1 + (seed % 2) as usize;
        let mut store = ParamStore::new();
        let ops: Vec<OpInstance> = CandidateOp::ALL
            .iter()
            .enumerate()
            .map(|(i, &op)| OpInstance::new(op, 4, 4, stride, &mut store, &format!("e.{i}"), &mut rng).unwrap())
            .collect();
        let logits: Vec<f64> = (0..ops.len()).map(|_| rng.random_range(-3.0..3.0)).collect();
        let x = Tensor::randn(&[2, 4, 6, 6], 1.0, &mut rng);

        let mut s = Session::new(&store);
        let xv = s.graph.leaf(x, false);
        let av = s.graph.leaf(Tensor::new(vec![ops.len()], logits.clone()).unwrap(), false);
        let mixed = mixed_edge_forward(&mut s, xv, av, &ops).unwrap();
        let sm = s.graph.softmax(av).unwrap();
        max_sum_err = max_sum_err.max((s.graph.value(sm).data().iter().sum::<f64>() - 1.0).abs());

        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|a| (a - top).exp()).collect();
        let z: f64 = e.iter().sum();
        let w: Vec<f64> = e.iter().map(|v| v / z).collect();
        max_sum_err = max_sum_err.max((w.iter().sum::<f64>() - 1.0).abs());

        let mut brute = vec![0.0; s.graph.value(mixed).numel()];
        for (op, wi) in ops.iter().zip(&w) {
            let y = op.forward(&mut s, xv).unwrap();
            for (b, v) in brute.iter_mut().zip(s.graph.value(y).data()) {
                *b += wi * v;
            }
        }
        for (b, m) in brute.iter().zip(s.graph.value(mixed).data()) {
            max_diff = max_diff.max((b - m).abs());
        }
    }
    Outcome {
        id: 2,
        pass: max_diff <= 1e-10 && max_sum_err <= 1e-12,
        detail: format!("mixed vs weighted sum {max_diff:.2e}, softmax sum error {max_sum_err:.2e}"),
    }
}

fn enhancement_facts() -> Outcome {
    let mut notes = Vec::new();
    let truth = [sigma(1.0, 5.0) == 1, sigma(-2.0, -1.0) == 0, sigma(-0.5, -1.0) == 1];
    if truth.contains(&false) {
        notes.push(format!("sigma truth table {truth:?}"));
    }
    if phi(2.0, 1.0, 10.0) != 2.0 {
        notes.push("phi(2, 1) != 2".into());
    }
    // sigma = 0 cases
    for (g, t) in [(-2.0, -1.0), (-5.0, -0.5), (-3.0, 2.0)] {
        if sigma(g, t) == 0 && phi(g, t, 10.0) != 0.0 {
            notes.push(format!("phi({g}, {t}) with sigma 0"));
        }
    }
    // guards: zero slope, flat loss step, single pair, identical complexity
    if phi(3.0, 0.0, 10.0) != 0.0 || phi(f64::NAN, 1.0, 10.0) != 0.0 {
        notes.push("theta1 / NaN guard".into());
    }
    let guard_cases: [&[(f64, f64)]; 3] = [&[(1.0, 2.0)], &[(1.0, 2.0), (3.0, 2.0)], &[(4.0, 1.0), (4.0, 2.0), (4.0, 3.0)]];
    for pts in guard_cases {
        let mut e = Enhancer::new(5, 10.0, 0, true);
        let last = pts.iter().map(|&(x, y)| e.observe(x, y)).last().unwrap();
        if last.phi != 0.0 {
            notes.push(format!("guard case {pts:?} gave phi {}", last.phi));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let alpha: Vec<f64> = (0..28).map(|_| rng.random_range(-1.0..1.0)).collect();
        let grad: Vec<f64> = (0..28).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lr = rng.random_range(1e-4..1.0);
        let mut enhanced = alpha.clone();
        apply_arch_update(&mut enhanced, &grad, lr, 0.0).unwrap();
        let plain: Vec<f64> = alpha.iter().zip(&grad).map(|(a, g)| a - lr * g).collect();
        if enhanced.iter().zip(&plain).any(|(a, b)| a.to_bits() != b.to_bits()) {
            notes.push("phi = 0 update differs from plain step".into());
            break;
        }
    }
    Outcome {
        id: 3,
        pass: notes.is_empty(),
        detail: if notes.is_empty() {
            "sigma cases (1,5)->1 (-2,-1)->0 (-0.5,-1)->1; phi(2,1)=2; guards give 0; phi=0 step bit-identical".into()
        } else {
            notes.join("; ")
        },
    }
}

/// `L(w, a) = a w^3 / 3 + a^2 w`; the mixed derivative is `w^2 + 2a` and the
/// central difference over `w` carries an error of exactly `eps^2 v^3 / 3`.
struct Cubic {
    w: f64,
}

impl Bilevel for Cubic {
    type Batch = ();

    fn weights(&self) -> Vec<f64> {
        vec![self.w]
    }

    fn set_weights(&mut self, w: &[f64]) -> Result<()> {
        self.w = w[0];
        Ok(())
    }

    fn loss_grads(&self, alpha: &[f64], _: &()) -> Result<LossGrads> {
        let (w, a) = (self.w, alpha[0]);
        Ok(LossGrads {
            loss: a * w.powi(3) / 3.0 + a * a * w,
            dw: vec![a * w * w + a * a],
            dalpha: vec![w.powi(3) / 3.0 + 2.0 * a * w],
        })
    }
}

fn second_order() -> Outcome {
    let (w, a, v) = (1.5, 0.7, 1.2);
    let exact = (w * w + 2.0 * a) * v;
    let mut m = Cubic { w };
    let err = |m: &mut Cubic, eps: f64| (mixed_hvp_fd(m, &[a], &(), &[v], eps).unwrap()[0] - exact).abs();
    let (e1, e2) = (err(&mut m, 1e-2), err(&mut m, 1e-3));
    let ratio = e1 / e2;
    let predicted = 1e-4 * v.powi(3) / 3.0;
    Outcome {
        id: 4,
        pass: (ratio - 100.0).abs() < 1.0 && (e1 - predicted).abs() < 1e-3 * predicted && m.w == w,
        detail: format!("error {e1:.3e} at eps 1e-2, {e2:.3e} at eps 1e-3, ratio {ratio:.2} (quadratic: 100)"),
    }
}

fn least_squares() -> Outcome {
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let m = rng.random_range(2..=10usize);
        let mut h = ComplexityLossHistory::new(m);
        let pts: Vec<(f64, f64)> = (0..m).map(|_| (rng.random_range(0.0..10.0), rng.random_range(0.0..5.0))).collect();
        for &(x, y) in &pts {
            h.push(x, y);
        }
        // [n  Sx ] [t0]   [Sy ]
        // [Sx Sxx] [t1] = [Sxy], solved by Cramer's rule
        let n = m as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let det = n * sxx - sx * sx;
        let t1 = (n * sxy - sx * sy) / det;
        let t0 = (sxx * sy - sx * sxy) / det;
        let fit = fit_theta1(&h).unwrap();
        worst = worst.max((fit.theta1 - t1).abs()).max((fit.theta0 - t0).abs());
    }
    let mut col = ComplexityLossHistory::new(5);
    for k in 0..5 {
        col.push(k as f64 * 2.0 + 1.0, -0.75 * (k as f64 * 2.0 + 1.0) + 4.0);
    }
    let exact = fit_theta1(&col).unwrap().theta1 == -0.75;
    Outcome {
        id: 5,
        pass: worst <= 1e-10 && exact,
        detail: format!("max deviation from normal equations {worst:.2e} over 50 sets; collinear slope exact: {exact}"),
    }
}

/// Peels off the set of points no remaining point dominates, layer by layer.
fn layered_fronts(objs: &[[f64; 2]]) -> Vec<Vec<usize>> {
    let mut left: Vec<usize> = (0..objs.len()).collect();
    let mut fronts = Vec::new();
    while !left.is_empty() {
        let layer: Vec<usize> = left
            .iter()
            .copied()
            .filter(|&i| !left.iter().any(|&j| {
                let (a, b) = (objs[j], objs[i]);
                a[0] <= b[0] && a[1] <= b[1] && (a[0] < b[0] || a[1] < b[1])
            }))
            .collect();
        left.retain(|i| !layer.contains(i));
        fronts.push(layer);
    }
    fronts
}

fn nsga() -> Outcome {
    let mut notes = Vec::new();
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // odd seeds draw from a coarse grid so ties and duplicates occur
        let objs: Vec<[f64; 2]> = (0..200)
            .map(|_| {
                if seed % 2 == 1 {
                    [rng.random_range(0..15) as f64, rng.random_range(0..15) as f64]
                } else {
                    [rng.random::<f64>(), rng.random::<f64>()]
                }
            })
            .collect();
        let mut fast = fast_nondominated_sort(&objs);
        let mut oracle = layered_fronts(&objs);
        for f in fast.iter_mut().chain(oracle.iter_mut()) {
            f.sort_unstable();
        }
        if fast != oracle {
            notes.push(format!("front mismatch at seed {seed}"));
            break;
        }
    }
    let line = [[0.0, 2.0], [1.0, 1.0], [2.0, 0.0]];
    let cd = crowding_distance(&line, &[0, 1, 2]);
    if !(cd[0].is_infinite() && cd[2].is_infinite() && cd[1] == 2.0) {
        notes.push(format!("crowding {cd:?}"));
    }
    let (n, t) = (15, 20);
    for seed in 0..10u64 {
        let cfg = EvoConfig { generations: t, ..EvoConfig::default() };
        let mut stats = Vec::new();
        evolve_with(&cfg, &template(), &SurrogateEvaluator::default(), seed, |s| stats.push(*s)).unwrap();
        if stats.len() != t + 1 || stats.iter().any(|s| s.population != n) {
            notes.push(format!("population size drifted at seed {seed}"));
        }
        if stats.windows(2).any(|w| w[1].best_err > w[0].best_err || w[1].best_params > w[0].best_params) {
            notes.push(format!("best objective regressed at seed {seed}"));
        }
    }
    Outcome {
        id: 6,
        pass: notes.is_empty(),
        detail: if notes.is_empty() {
            "fronts equal the layered oracle on 100 x 200 points; crowding [inf, 2, inf]; N=15 kept over 20 generations; no regression in 10 runs".into()
        } else {
            notes.join("; ")
        },
    }
}

fn template() -> NetworkGenome {
    let normal: Vec<Gene> = (2..6).flat_map(|j| [Gene(CandidateOp::SepConv3x3, 0), Gene(CandidateOp::SkipConnect, j - 1)]).collect();
    let reduce: Vec<Gene> = (2..6).flat_map(|j| [Gene(CandidateOp::MaxPool3x3, 0), Gene(CandidateOp::DilConv3x3, j - 1)]).collect();
    NetworkGenome::new([16, 2, 2, 2], [1.5, 1.5], &Genotype { normal, reduce, nodes: 7 })
}

fn decision() -> Outcome {
    let start = Instant::now();
    let front = [(1.0, 10.0), (9.0, 2.0), (2.0, 3.0), (5.0, 6.0)];
    let mut notes = Vec::new();
    for denom in [Denominator::One, Denominator::SquaredNorm, Denominator::Norm] {
        for (sx, sy) in [(1.0, 1.0), (1e3, 1.0), (1.0, 0.01), (7.5, 300.0)] {
            let pts: Vec<(f64, f64)> = front.iter().map(|&(x, y)| (x * sx, y * sy)).collect();
            let d = decide_with(&pts, denom).unwrap();
            if d.index != 2 {
                notes.push(format!("{denom:?} scale ({sx},{sy}) picked {}", d.index));
            }
            if d.distances[0] != 0.0 || d.distances[1] != 0.0 {
                notes.push(format!("anchor distances {:?}", &d.distances[..2]));
            }
        }
    }
    let ms = start.elapsed().as_secs_f64() * 1e3;
    Outcome {
        id: 7,
        pass: notes.is_empty() && ms < 100.0,
        detail: if notes.is_empty() {
            format!("(2,3) chosen under 3 denominators x 4 scalings, anchors at 0, {ms:.2} ms")
        } else {
            notes.join("; ")
        },
    }
}

const PUBLISHED_GENOMES: [([i64; 4], [f64; 2]); 30] = [
    ([50, 6, 2, 2], [2.50, 1.52]),
    ([35, 4, 3, 2], [2.50, 1.70]),
    ([35, 4, 3, 2], [2.50, 1.16]),
    ([27, 2, 3, 2], [2.42, 1.79]),
    ([50, 6, 2, 3], [1.20, 1.09]),
    ([27, 4, 3, 2], [1.36, 2.84]),
    ([28, 2, 2, 2], [1.31, 1.83]),
    ([28, 2, 2, 2], [1.20, 1.83]),
    ([16, 2, 3, 3], [1.87, 1.09]),
    ([11, 3, 3, 2], [2.50, 1.68]),
    ([9, 6, 4, 4], [2.33, 1.28]),
    ([9, 6, 4, 4], [1.85, 1.28]),
    ([15, 2, 2, 3], [1.19, 1.28]),
    ([9, 6, 4, 4], [1.41, 1.19]),
    ([9, 6, 4, 2], [1.41, 1.16]),
    ([54, 6, 2, 2], [2.93, 2.42]),
    ([54, 6, 2, 2], [2.80, 1.76]),
    ([46, 6, 2, 2], [2.41, 2.38]),
    ([51, 6, 2, 2], [2.61, 1.61]),
    ([56, 6, 2, 3], [2.29, 1.15]),
    ([56, 6, 2, 2], [2.29, 1.03]),
    ([48, 6, 3, 4], [1.12, 2.38]),
    ([44, 6, 3, 2], [1.08, 2.46]),
    ([35, 6, 3, 2], [1.07, 2.45]),
    ([22, 3, 6, 2], [1.17, 1.79]),
    ([14, 2, 2, 3], [1.76, 1.45]),
    ([10, 5, 2, 2], [1.98, 2.37]),
    ([8, 5, 2, 3], [1.96, 1.03]),
    ([8, 2, 2, 2], [1.83, 1.12]),
    ([8, 5, 2, 3], [1.14, 1.11]),
];

fn published_genomes() -> Outcome {
    let g = template().genotype();
    let mut notes = Vec::new();
    for (v, want) in [([50, 6, 2, 2], 10), ([50, 2, 2, 2], 6), ([50, 6, 3, 4], 13)] {
        let d = NetworkGenome::new(v, [1.0, 1.0], &g).depth();
        if d != want {
            notes.push(format!("depth{:?} = {d}", &v[1..]));
        }
    }
    for (k, (v, r)) in PUBLISHED_GENOMES.iter().enumerate() {
        let genome = NetworkGenome::new(*v, *r, &g);
        let built = genome.validate(&GenomeBounds::default()).and_then(|_| {
            let plan = genome.plan(10, (32, 32))?;
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
            CellNetwork::build(&plan, NetLayout::Discrete(&g), &mut store, &mut rng)?;
            Ok(store.numel() == plan.params(&g))
        });
        match built {
            Ok(true) => {}
            Ok(false) => notes.push(format!("row {k}: allocated params differ from the count")),
            Err(e) => notes.push(format!("row {k}: {e}")),
        }
    }
    Outcome {
        id: 8,
        pass: notes.is_empty(),
        detail: if notes.is_empty() {
            "depths 10/6/13; 30 genome rows validate and build at 32x32".into()
        } else {
            notes.join("; ")
        },
    }
}

fn cli(args: &[&str]) -> Result<()> {
    run(&Cli::try_parse_from(std::iter::once("egdarts").chain(args.iter().copied())).expect("valid arguments"))
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let config = repo_root().join("configs/desk.json");
    let config = config.to_str().unwrap();
    let common = ["--config", config, "--out", out];
    let with = |cmd: &str, extra: &[&str]| -> Vec<String> {
        std::iter::once(cmd).chain(common).chain(extra.iter().copied()).map(str::to_string).collect()
    };
    let selected = dir.path().join("selected_genome.json");
    let steps = [
        with("search-blocks", &[]),
        with("search-network", &[]),
        with("decide", &[]),
        with("train", &["--genome", selected.to_str().unwrap()]),
    ];
    for s in &steps {
        let args: Vec<&str> = s.iter().map(String::as_str).collect();
        if let Err(e) = cli(&args) {
            return Outcome { id: 9, pass: false, detail: format!("{} failed: {e}", s[0]) };
        }
    }
    let elapsed = start.elapsed();
    let rows = read_pareto_csv(&dir.path().join("pareto.csv")).unwrap();
    let objs: Vec<[f64; 2]> = rows.iter().map(|r| [r.err_pct, r.params as f64]).collect();
    let mutual = objs.iter().all(|a| objs.iter().all(|b| !dominates(a, b)));
    let decision: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("decision.json")).unwrap()).unwrap();
    let front_acc = 100.0 - decision["selected"]["err_pct"].as_f64().unwrap();
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("train_metrics.json")).unwrap()).unwrap();
    let test_acc = metrics["test"]["accuracy"].as_f64().unwrap_or(0.0) * 100.0;
    Outcome {
        id: 9,
        pass: elapsed < Duration::from_secs(30 * 60) && test_acc >= 85.0 && front_acc >= 85.0 && mutual,
        detail: format!(
            "{:.1} min; decided genome {:.1}% on the scoring half, {test_acc:.1}% on the test set after retraining; {} front rows, non-dominated: {mutual}",
            elapsed.as_secs_f64() / 60.0,
            front_acc,
            rows.len()
        ),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

fn enhancement_effect() -> Outcome {
    let cfg = RunConfig::load(&repo_root().join("configs/desk.json")).unwrap();
    let data = synth_dataset(cfg.dataset.synth.seed, 2000, 4, 16).unwrap();
    let base: BlockSearchConfig = cfg.block_search.clone();
    let last = base.stages.last().unwrap().depth;
    let plan = NetworkPlan::proxy((16, 16), last, base.node_channels, base.num_nodes, 4).unwrap();
    let mut summary = BTreeMap::new();
    for enhance in [true, false] {
        let (mut params, mut acc) = (Vec::new(), Vec::new());
        for seed in 0..5u64 {
            let c = BlockSearchConfig { enhance, ..base.clone() };
            let out = progressive_search(&data, &c, seed).unwrap();
            params.push(plan.params(&out.genotype) as f64);
            acc.push(out.val_accuracy * 100.0);
        }
        summary.insert(enhance, (median(params), median(acc)));
    }
    let (p_on, a_on) = summary[&true];
    let (p_off, a_off) = summary[&false];
    Outcome {
        id: 10,
        pass: p_on <= p_off && a_on >= a_off - 2.0,
        detail: format!(
            "median derived params {p_on:.0} with enhancement vs {p_off:.0} without; median val accuracy {a_on:.1}% vs {a_off:.1}%"
        ),
    }
}

/// Every file under `root` keyed by relative path; manifests lose their
/// timestamp.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let mut bytes = std::fs::read(&p).unwrap();
            if p.to_string_lossy().ends_with(".manifest.json") {
                let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                v.as_object_mut().unwrap().remove("timestamp_unix");
                bytes = serde_json::to_vec(&v).unwrap();
            }
            out.insert(p.strip_prefix(root).unwrap().to_path_buf(), bytes);
        }
    }
    out
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = out.to_str().unwrap();
    let config = repo_root().join("configs/smoke.json");
    let c = config.to_str().unwrap();
    let genome = out.join("selected_genome.json");
    let weights = out.join("weights.bin");
    let (g, w) = (genome.to_str().unwrap(), weights.to_str().unwrap());
    let commands: Vec<Vec<&str>> = vec![
        vec!["search-blocks", "--config", c, "--out", o],
        vec!["search-network", "--config", c, "--out", o, "--evaluator", "trained"],
        vec!["decide", "--config", c, "--out", o],
        vec!["train", "--config", c, "--out", o, "--genome", g],
        vec!["eval", "--config", c, "--out", o, "--genome", g, "--weights", w],
    ];
    let mut runs = Vec::new();
    for _ in 0..2 {
        if out.exists() {
            std::fs::remove_dir_all(&out).unwrap();
        }
        for cmd in &commands {
            if let Err(e) = cli(cmd) {
                return Outcome { id: 11, pass: false, detail: format!("{} failed: {e}", cmd[0]) };
            }
        }
        runs.push(snapshot(&out));
    }
    let differing: Vec<String> = runs[0]
        .keys()
        .chain(runs[1].keys())
        .filter(|k| runs[0].get(*k) != runs[1].get(*k))
        .map(|k| k.display().to_string())
        .collect();
    Outcome {
        id: 11,
        pass: differing.is_empty() && runs[0].len() >= 12,
        detail: if differing.is_empty() {
            format!("{} artifacts from 5 commands byte-identical across two runs", runs[0].len())
        } else {
            format!("differing artifacts: {}", differing.join(", "))
        },
    }
}

#[test]
fn acceptance() {
    let criteria: [fn() -> Outcome; 11] = [
        autodiff,
        relaxation,
        enhancement_facts,
        second_order,
        least_squares,
        nsga,
        decision,
        published_genomes,
        end_to_end,
        enhancement_effect,
        determinism,
    ];
    let mut failed = Vec::new();
    for c in criteria {
        let o = c();
        emit(&o);
        if !o.pass {
            failed.push(o.id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
