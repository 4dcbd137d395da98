//! Variation operators for the mixed integer/real macro genome.

use rand::Rng;

use super::nsga::crowded_cmp;
use crate::network::{GenomeBounds, NetworkGenome};

pub const SBX_ETA: f64 = 15.0;
pub const PM_ETA: f64 = 20.0;

/// Simulated binary crossover of two reals, unbounded; the children always
/// sum to `x1 + x2`.
pub fn sbx_pair<R: Rng + ?Sized>(x1: f64, x2: f64, eta: f64, rng: &mut R) -> (f64, f64) {
    let u: f64 = rng.random();
    let beta = if u <= 0.5 {
        (2.0 * u).powf(1.0 / (eta + 1.0))
    } else {
        (1.0 / (2.0 * (1.0 - u))).powf(1.0 / (eta + 1.0))
    };
    let mean = 0.5 * (x1 + x2);
    let half = 0.5 * beta * (x2 - x1);
    (mean - half, mean + half)
}

/// Bounded polynomial mutation of `x` in `[lo, hi]`.
pub fn polynomial_mutation<R: Rng + ?Sized>(x: f64, lo: f64, hi: f64, eta: f64, rng: &mut R) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let (d1, d2) = ((x - lo) / span, (hi - x) / span);
    let u: f64 = rng.random();
    let p = 1.0 / (eta + 1.0);
    let dq = if u < 0.5 {
        let v = 2.0 * u + (1.0 - 2.0 * u) * (1.0 - d1).powf(eta + 1.0);
        v.powf(p) - 1.0
    } else {
        let v = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * (1.0 - d2).powf(eta + 1.0);
        1.0 - v.powf(p)
    };
    (x + dq * span).clamp(lo, hi)
}

pub fn clamp_genome(g: &mut NetworkGenome, b: &GenomeBounds) {
    let ints = g.ints();
    let mut v = [0; 4];
    for i in 0..4 {
        v[i] = ints[i].clamp(b.ints()[i].0, b.ints()[i].1);
    }
    g.set_ints(v);
    let reals = g.reals();
    let mut r = [0.0; 2];
    for i in 0..2 {
        let (lo, hi) = b.reals()[i];
        r[i] = if reals[i].is_finite() { reals[i].clamp(lo, hi) } else { lo };
    }
    g.set_reals(r);
}

/// Uniform draw of the six macro variables with the cells of `template`.
pub fn random_genome<R: Rng + ?Sized>(template: &NetworkGenome, b: &GenomeBounds, rng: &mut R) -> NetworkGenome {
    let mut g = template.clone();
    let ib = b.ints();
    g.set_ints([0, 1, 2, 3].map(|i| rng.random_range(ib[i].0..=ib[i].1)));
    let rb = b.reals();
    g.set_reals([0, 1].map(|i| if rb[i].1 > rb[i].0 { rng.random_range(rb[i].0..=rb[i].1) } else { rb[i].0 }));
    g
}

/// Two children: integers exchanged gene-wise with probability one half,
/// reals recombined by SBX, everything clamped.
pub fn crossover<R: Rng + ?Sized>(
    a: &NetworkGenome,
    b: &NetworkGenome,
    bounds: &GenomeBounds,
    rng: &mut R,
) -> (NetworkGenome, NetworkGenome) {
    let (mut c1, mut c2) = (a.clone(), b.clone());
    let (mut i1, mut i2) = (a.ints(), b.ints());
    for k in 0..4 {
        if rng.random_bool(0.5) {
            std::mem::swap(&mut i1[k], &mut i2[k]);
        }
    }
    c1.set_ints(i1);
    c2.set_ints(i2);
    let (ra, rb) = (a.reals(), b.reals());
    let mut r1 = [0.0; 2];
    let mut r2 = [0.0; 2];
    for k in 0..2 {
        (r1[k], r2[k]) = sbx_pair(ra[k], rb[k], SBX_ETA, rng);
    }
    c1.set_reals(r1);
    c2.set_reals(r2);
    clamp_genome(&mut c1, bounds);
    clamp_genome(&mut c2, bounds);
    (c1, c2)
}

/// Each variable mutates with probability `prob`: integers step by ±1,
/// reals take a polynomial mutation.
pub fn mutate<R: Rng + ?Sized>(g: &mut NetworkGenome, prob: f64, bounds: &GenomeBounds, rng: &mut R) {
    let mut ints = g.ints();
    for (k, v) in ints.iter_mut().enumerate() {
        if rng.random_bool(prob) {
            let step = if rng.random_bool(0.5) { 1 } else { -1 };
            let (lo, hi) = bounds.ints()[k];
            *v = (*v + step).clamp(lo, hi);
        }
    }
    g.set_ints(ints);
    let mut reals = g.reals();
    for (k, v) in reals.iter_mut().enumerate() {
        if rng.random_bool(prob) {
            let (lo, hi) = bounds.reals()[k];
            *v = polynomial_mutation(*v, lo, hi, PM_ETA, rng);
        }
    }
    g.set_reals(reals);
    clamp_genome(g, bounds);
}

/// Binary tournament on (rank, crowding); ties keep the first draw.
pub fn tournament<R: Rng + ?Sized>(rank: &[usize], crowd: &[f64], rng: &mut R) -> usize {
    let n = rank.len();
    let a = rng.random_range(0..n);
    if n == 1 {
        return a;
    }
    let mut b = rng.random_range(0..n - 1);
    if b >= a {
        b += 1;
    }
    if crowded_cmp(rank[b], crowd[b], rank[a], crowd[a]).is_lt() {
        b
    } else {
        a
    }
}

/// `n` children from tournament-selected parent pairs, crossed with
/// probability `crossover_prob` and mutated per gene with `mutation_prob`.
#[allow(clippy::too_many_arguments)]
pub fn make_offspring<R: Rng + ?Sized>(
    parents: &[NetworkGenome],
    rank: &[usize],
    crowd: &[f64],
    n: usize,
    crossover_prob: f64,
    mutation_prob: f64,
    bounds: &GenomeBounds,
    rng: &mut R,
) -> Vec<NetworkGenome> {
    let mut out = Vec::with_capacity(n + 1);
    while out.len() < n {
        let p1 = &parents[tournament(rank, crowd, rng)];
        let p2 = &parents[tournament(rank, crowd, rng)];
        let (mut c1, mut c2) = if rng.random_bool(crossover_prob) {
            crossover(p1, p2, bounds, rng)
        } else {
            (p1.clone(), p2.clone())
        };
        mutate(&mut c1, mutation_prob, bounds, rng);
        mutate(&mut c2, mutation_prob, bounds, rng);
        out.push(c1);
        out.push(c2);
    }
    out.truncate(n);
    out
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::search_space::{CandidateOp, Gene, Genotype};

    fn template() -> NetworkGenome {
        let genes: Vec<Gene> = (2..6).flat_map(|j| [Gene(CandidateOp::SepConv3x3, 0), Gene(CandidateOp::MaxPool3x3, j - 1)]).collect();
        let g = Genotype { normal: genes.clone(), reduce: genes, nodes: 7 };
        NetworkGenome::new([16, 2, 2, 2], [1.5, 1.5], &g)
    }

    #[test]
    fn no_variation_clones_parents() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = GenomeBounds::default();
        let parents: Vec<_> = (0..6).map(|_| random_genome(&template(), &b, &mut rng)).collect();
        let kids = make_offspring(&parents, &[1; 6], &[0.0; 6], 6, 0.0, 0.0, &b, &mut rng);
        assert_eq!(kids.len(), 6);
        assert!(kids.iter().all(|k| parents.contains(k)));
    }

    #[test]
    fn offspring_stay_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = GenomeBounds::default();
        let parents: Vec<_> = (0..10).map(|_| random_genome(&template(), &b, &mut rng)).collect();
        for _ in 0..1000 {
            for k in make_offspring(&parents, &[1; 10], &[1.0; 10], 10, 0.9, 0.5, &b, &mut rng) {
                assert!(k.validate(&b).is_ok(), "{k:?}");
            }
        }
    }

    #[test]
    fn polynomial_mutation_respects_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let y = polynomial_mutation(2.9, 1.0, 3.0, PM_ETA, &mut rng);
            assert!((1.0..=3.0).contains(&y));
        }
    }

    #[test]
    fn tournament_prefers_rank_then_crowding() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            assert_eq!(tournament(&[2, 1], &[9.0, 0.0], &mut rng), 1);
            assert_eq!(tournament(&[1, 1], &[0.5, f64::INFINITY], &mut rng), 1);
        }
    }
}
