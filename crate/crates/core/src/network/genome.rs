use serde::{Deserialize, Serialize};

use super::NetworkPlan;
use crate::error::{Error, Result};
use crate::search_space::{Gene, Genotype};

/// Macro-architecture: stem width `v0`, normal-cell counts `v1..v3` of the
/// three stages and channel multipliers `v4`, `v5` applied at the two
/// reductions, together with the searched cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkGenome {
    pub v0: i64,
    pub v1: i64,
    pub v2: i64,
    pub v3: i64,
    pub v4: f64,
    pub v5: f64,
    pub normal: Vec<Gene>,
    pub reduce: Vec<Gene>,
}

/// Inclusive box for the six macro variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenomeBounds {
    pub v0: (i64, i64),
    pub v1: (i64, i64),
    pub v2: (i64, i64),
    pub v3: (i64, i64),
    pub v4: (f64, f64),
    pub v5: (f64, f64),
}

impl Default for GenomeBounds {
    fn default() -> Self {
        Self {
            v0: (8, 60),
            v1: (1, 6),
            v2: (1, 6),
            v3: (1, 6),
            v4: (1.0, 3.0),
            v5: (1.0, 3.0),
        }
    }
}

impl GenomeBounds {
    pub fn ints(&self) -> [(i64, i64); 4] {
        [self.v0, self.v1, self.v2, self.v3]
    }

    pub fn reals(&self) -> [(f64, f64); 2] {
        [self.v4, self.v5]
    }

    pub fn validate(&self, prefix: &str) -> Result<()> {
        for (i, (lo, hi)) in self.ints().into_iter().enumerate() {
            if lo < 1 || hi < lo {
                return Err(Error::config(format!("{prefix}.v{i}"), format!("bad range ({lo}, {hi})")));
            }
        }
        for (i, (lo, hi)) in self.reals().into_iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && hi >= lo) {
                return Err(Error::config(format!("{prefix}.v{}", i + 4), format!("bad range ({lo}, {hi})")));
            }
        }
        Ok(())
    }
}

/// Size and cost summary of a built genome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkAnalytics {
    pub params: usize,
    pub flops: u64,
    pub depth: usize,
    pub latency_ms: Option<f64>,
}

/// Nearest integer with halves rounded up.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

impl NetworkGenome {
    pub fn new(v: [i64; 4], r: [f64; 2], genotype: &Genotype) -> Self {
        Self {
            v0: v[0],
            v1: v[1],
            v2: v[2],
            v3: v[3],
            v4: r[0],
            v5: r[1],
            normal: genotype.normal.clone(),
            reduce: genotype.reduce.clone(),
        }
    }

    pub fn ints(&self) -> [i64; 4] {
        [self.v0, self.v1, self.v2, self.v3]
    }

    pub fn reals(&self) -> [f64; 2] {
        [self.v4, self.v5]
    }

    pub fn set_ints(&mut self, v: [i64; 4]) {
        [self.v0, self.v1, self.v2, self.v3] = v;
    }

    pub fn set_reals(&mut self, r: [f64; 2]) {
        [self.v4, self.v5] = r;
    }

    pub fn genotype(&self) -> Genotype {
        Genotype {
            normal: self.normal.clone(),
            reduce: self.reduce.clone(),
            nodes: self.normal.len() / 2 + 3,
        }
    }

    pub fn validate(&self, bounds: &GenomeBounds) -> Result<()> {
        for (i, (v, (lo, hi))) in self.ints().into_iter().zip(bounds.ints()).enumerate() {
            if v < lo || v > hi {
                return Err(Error::InvalidArgument(format!("v{i} = {v} outside [{lo}, {hi}]")));
            }
        }
        for (i, (v, (lo, hi))) in self.reals().into_iter().zip(bounds.reals()).enumerate() {
            if !v.is_finite() || v < lo || v > hi {
                return Err(Error::InvalidArgument(format!("v{} = {v} outside [{lo}, {hi}]", i + 4)));
            }
        }
        self.genotype().validate()
    }

    /// Node widths of the three stages.
    pub fn channels(&self) -> [usize; 3] {
        let c1 = self.v0.max(1) as usize;
        let c2 = round_half_up(c1 as f64 * self.v4).max(1);
        let c3 = round_half_up(c2 as f64 * self.v5).max(1);
        [c1, c2, c3]
    }

    /// Number of normal cells.
    pub fn depth(&self) -> usize {
        (self.v1 + self.v2 + self.v3) as usize
    }

    pub fn plan(&self, num_classes: usize, input_hw: (usize, usize)) -> Result<NetworkPlan> {
        if self.ints().iter().any(|&v| v < 1) {
            return Err(Error::InvalidArgument("v0..v3 must be positive".into()));
        }
        let [c1, c2, c3] = self.channels();
        let mut cells = Vec::new();
        cells.extend(std::iter::repeat_n((false, c1), self.v1 as usize));
        cells.push((true, c2));
        cells.extend(std::iter::repeat_n((false, c2), self.v2 as usize));
        cells.push((true, c3));
        cells.extend(std::iter::repeat_n((false, c3), self.v3 as usize));
        NetworkPlan::new(input_hw, c1, &cells, self.genotype().nodes, num_classes)
    }

    /// Parameter count, FLOPs and depth without building the network.
    pub fn analytics(&self, num_classes: usize, input_hw: (usize, usize)) -> Result<NetworkAnalytics> {
        let plan = self.plan(num_classes, input_hw)?;
        let g = self.genotype();
        Ok(NetworkAnalytics {
            params: plan.params(&g),
            flops: plan.flops(&g),
            depth: self.depth(),
            latency_ms: None,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let g: NetworkGenome = serde_json::from_str(s)?;
        g.genotype().validate()?;
        Ok(g)
    }
}
