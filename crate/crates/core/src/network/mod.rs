//! Cell stacks: the search-time proxy supernet and the final networks decoded
//! from a macro genome, plus their exact parameter and FLOP analytics.

mod genome;
mod train;

pub use genome::{round_half_up, GenomeBounds, NetworkAnalytics, NetworkGenome};
pub use train::{evaluate, measure_latency_ms, train_epoch, EvalResult};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search_space::ops::strided;
use crate::search_space::{op_flops, op_param_count, ArchParams, CellLayout, CellModule, CellSpec, Genotype};
use crate::tensor::{Gradients, ParamId, ParamStore, Session, Tensor, Var};

pub const IN_CHANNELS: usize = 3;

/// Geometry of one cell in a stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellPlan {
    pub reduction: bool,
    pub node_channels: usize,
    pub c_prev_prev: usize,
    pub c_prev: usize,
    /// Spatial sizes of (prev_prev, prev).
    pub input_hw: [(usize, usize); 2],
}

impl CellPlan {
    pub fn out_hw(&self) -> (usize, usize) {
        let (h, w) = self.input_hw[1];
        if self.reduction {
            (strided(h, 2), strided(w, 2))
        } else {
            (h, w)
        }
    }

    fn pre0_stride(&self) -> usize {
        if self.input_hw[0] == self.input_hw[1] {
            1
        } else {
            2
        }
    }
}

/// Full geometry of a stem → cells → GAP → linear stack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkPlan {
    pub input_hw: (usize, usize),
    pub stem_channels: usize,
    pub num_nodes: usize,
    pub num_classes: usize,
    pub cells: Vec<CellPlan>,
}

impl NetworkPlan {
    /// `cells` lists `(reduction, node_channels)` in order. The stem output
    /// feeds both inputs of the first cell.
    pub fn new(
        input_hw: (usize, usize),
        stem_channels: usize,
        cells: &[(bool, usize)],
        num_nodes: usize,
        num_classes: usize,
    ) -> Result<Self> {
        let spec = CellSpec::new(num_nodes, false)?;
        if stem_channels == 0 || num_classes < 2 || cells.iter().any(|c| c.1 == 0) {
            return Err(Error::InvalidArgument(format!(
                "stem channels {stem_channels}, {num_classes} classes and every node width must be positive"
            )));
        }
        let reductions = cells.iter().filter(|c| c.0).count();
        let min = 1usize << reductions;
        if input_hw.0 < min.max(4) || input_hw.1 < min.max(4) {
            return Err(Error::InvalidArgument(format!(
                "input {}x{} is too small for {reductions} halvings",
                input_hw.0, input_hw.1
            )));
        }
        let mut plans = Vec::with_capacity(cells.len());
        let (mut c_pp, mut c_p) = (stem_channels, stem_channels);
        let (mut hw_pp, mut hw_p) = (input_hw, input_hw);
        for &(reduction, node_channels) in cells {
            let plan = CellPlan {
                reduction,
                node_channels,
                c_prev_prev: c_pp,
                c_prev: c_p,
                input_hw: [hw_pp, hw_p],
            };
            c_pp = c_p;
            c_p = spec.intermediates() * node_channels;
            hw_pp = hw_p;
            hw_p = plan.out_hw();
            plans.push(plan);
        }
        Ok(Self {
            input_hw,
            stem_channels,
            num_nodes,
            num_classes,
            cells: plans,
        })
    }

    /// Search-time proxy of `depth` cells at base node width `c`. Reductions
    /// sit at `depth/3` and `2·depth/3` (only the last cell for depth < 3),
    /// and the node width doubles at each one.
    pub fn proxy(input_hw: (usize, usize), depth: usize, c: usize, num_nodes: usize, num_classes: usize) -> Result<Self> {
        if depth == 0 {
            return Err(Error::InvalidArgument("proxy depth must be at least 1".into()));
        }
        let reductions: Vec<usize> = if depth < 3 {
            vec![depth - 1]
        } else {
            vec![depth / 3, 2 * depth / 3]
        };
        let mut width = c;
        let cells: Vec<(bool, usize)> = (0..depth)
            .map(|i| {
                let r = reductions.contains(&i);
                if r {
                    width *= 2;
                }
                (r, width)
            })
            .collect();
        Self::new(input_hw, c, &cells, num_nodes, num_classes)
    }

    pub fn classifier_in(&self) -> usize {
        self.cells
            .last()
            .map_or(self.stem_channels, |c| (self.num_nodes - 3) * c.node_channels)
    }

    /// Parameters outside the cell edges: stem, input projections, classifier.
    pub fn fixed_params(&self) -> usize {
        let stem = IN_CHANNELS * 9 * self.stem_channels;
        let pre: usize = self
            .cells
            .iter()
            .map(|c| (c.c_prev_prev + c.c_prev) * c.node_channels)
            .sum();
        let k = self.num_classes;
        stem + pre + self.classifier_in() * k + k
    }

    /// FLOPs outside the cell edges for one image.
    pub fn fixed_flops(&self) -> u64 {
        let (h, w) = self.input_hw;
        let stem = 2 * 9 * IN_CHANNELS as u64 * self.stem_channels as u64 * (h * w) as u64;
        let pre: u64 = self
            .cells
            .iter()
            .map(|c| {
                let s = c.pre0_stride();
                let (h0, w0) = c.input_hw[0];
                let (h1, w1) = c.input_hw[1];
                let n = c.node_channels as u64;
                2 * c.c_prev_prev as u64 * n * (strided(h0, s) * strided(w0, s)) as u64
                    + 2 * c.c_prev as u64 * n * (h1 * w1) as u64
            })
            .sum();
        stem + pre + 2 * (self.classifier_in() * self.num_classes) as u64
    }

    /// Exact trainable scalar count of the discrete network.
    pub fn params(&self, genotype: &Genotype) -> usize {
        let edges: usize = self
            .cells
            .iter()
            .flat_map(|c| {
                genotype
                    .cell(c.reduction)
                    .iter()
                    .map(move |g| op_param_count(g.0, c.node_channels, c.node_channels))
            })
            .sum();
        self.fixed_params() + edges
    }

    /// FLOPs of one forward pass of one image through the discrete network.
    pub fn flops(&self, genotype: &Genotype) -> u64 {
        let mut total = self.fixed_flops();
        for c in &self.cells {
            let (h, w) = c.input_hw[1];
            for g in genotype.cell(c.reduction) {
                let stride = if c.reduction && g.1 < 2 { 2 } else { 1 };
                let (eh, ew) = if stride == 1 { c.out_hw() } else { (h, w) };
                total += op_flops(g.0, c.node_channels, c.node_channels, eh, ew, stride);
            }
        }
        total
    }

    /// Softmax-weighted parameter count of the supernet under `alpha`,
    /// including the fixed parameters.
    pub fn expected_params(&self, alpha: &ArchParams) -> f64 {
        let mut total = self.fixed_params() as f64;
        for c in &self.cells {
            for e in &alpha.cell(c.reduction).edges {
                let w = e.weights();
                total += e
                    .ops
                    .iter()
                    .zip(&w)
                    .map(|(&op, p)| p * op_param_count(op, c.node_channels, c.node_channels) as f64)
                    .sum::<f64>();
            }
        }
        total
    }
}

/// How the cell edges are populated.
#[derive(Debug, Clone, Copy)]
pub enum NetLayout<'a> {
    Mixed(&'a ArchParams),
    Discrete(&'a Genotype),
}

/// 3x3 convolution from the RGB input followed by batch norm.
#[derive(Debug, Clone)]
pub struct Stem {
    pub weight: ParamId,
}

impl Stem {
    pub fn new<R: Rng + ?Sized>(c_out: usize, store: &mut ParamStore, rng: &mut R) -> Self {
        let std = (2.0 / (IN_CHANNELS * 9) as f64).sqrt();
        Self {
            weight: store.add("stem.weight", Tensor::randn(&[c_out, IN_CHANNELS, 3, 3], std, rng)),
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let y = s.graph.conv2d(x, w, 1, 1, 1)?;
        s.graph.batch_norm(y)
    }
}

/// Global average pool followed by a dense layer.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Classifier {
    pub fn new<R: Rng + ?Sized>(c_in: usize, classes: usize, store: &mut ParamStore, rng: &mut R) -> Self {
        let std = (1.0 / c_in as f64).sqrt();
        Self {
            weight: store.add("classifier.weight", Tensor::randn(&[classes, c_in], std, rng)),
            bias: store.add("classifier.bias", Tensor::zeros(&[classes])),
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let (w, b) = (s.param(self.weight), s.param(self.bias));
        let p = s.graph.global_avg_pool(x)?;
        s.graph.linear(p, w, b)
    }
}

/// Architecture parameters bound into one graph, one 1-D leaf per edge.
#[derive(Debug, Clone)]
pub struct AlphaVars {
    pub normal: Vec<Var>,
    pub reduce: Vec<Var>,
}

impl AlphaVars {
    pub fn bind(s: &mut Session<'_>, alpha: &ArchParams, requires_grad: bool) -> Self {
        let mut leaf = |e: &crate::search_space::EdgeAlpha| {
            s.graph
                .leaf(Tensor::new(vec![e.alpha.len()], e.alpha.clone()).expect("1-D"), requires_grad)
        };
        Self {
            normal: alpha.normal.edges.iter().map(&mut leaf).collect(),
            reduce: alpha.reduce.edges.iter().map(&mut leaf).collect(),
        }
    }

    /// Gradient in [`ArchParams::flatten`] order.
    pub fn flat_grad(&self, grads: &Gradients) -> Vec<f64> {
        self.normal
            .iter()
            .chain(&self.reduce)
            .flat_map(|&v| grads.get_or_zeros(v))
            .collect()
    }

    fn cell(&self, reduction: bool) -> &[Var] {
        if reduction {
            &self.reduce
        } else {
            &self.normal
        }
    }
}

/// A built stack with its parameters allocated in an external store.
#[derive(Debug, Clone)]
pub struct CellNetwork {
    pub plan: NetworkPlan,
    pub stem: Stem,
    pub cells: Vec<CellModule>,
    pub classifier: Classifier,
    mixed: bool,
}

impl CellNetwork {
    pub fn build<R: Rng + ?Sized>(plan: &NetworkPlan, layout: NetLayout<'_>, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        match layout {
            NetLayout::Mixed(a) => {
                a.validate()?;
                if a.num_nodes() != plan.num_nodes {
                    return Err(Error::InvalidArgument("alpha node count differs from plan".into()));
                }
            }
            NetLayout::Discrete(g) => {
                g.validate()?;
                if g.nodes != plan.num_nodes {
                    return Err(Error::InvalidArgument("genotype node count differs from plan".into()));
                }
            }
        }
        let stem = Stem::new(plan.stem_channels, store, rng);
        let mut cells = Vec::with_capacity(plan.cells.len());
        for (i, c) in plan.cells.iter().enumerate() {
            let spec = CellSpec::new(plan.num_nodes, c.reduction)?;
            let cell_layout = match layout {
                NetLayout::Mixed(a) => CellLayout::Mixed(a.cell(c.reduction)),
                NetLayout::Discrete(g) => CellLayout::Discrete(g.cell(c.reduction)),
            };
            cells.push(CellModule::new(
                spec,
                cell_layout,
                c.c_prev_prev,
                c.c_prev,
                c.node_channels,
                c.input_hw,
                store,
                &format!("cell{i}"),
                rng,
            )?);
        }
        let classifier = Classifier::new(plan.classifier_in(), plan.num_classes, store, rng);
        Ok(Self {
            plan: plan.clone(),
            stem,
            cells,
            classifier,
            mixed: matches!(layout, NetLayout::Mixed(_)),
        })
    }

    pub fn is_mixed(&self) -> bool {
        self.mixed
    }

    /// Logits for an N×3×H×W input. Mixed networks need `alphas`.
    pub fn forward(&self, s: &mut Session<'_>, x: Var, alphas: Option<&AlphaVars>) -> Result<Var> {
        if self.mixed != alphas.is_some() {
            return Err(Error::InvalidArgument(
                "mixed networks need alpha vars and discrete networks take none".into(),
            ));
        }
        let shape = s.graph.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != IN_CHANNELS || (shape[2], shape[3]) != self.plan.input_hw {
            return Err(Error::shape(
                "network",
                format!("expected N×3×{}×{} input, got {shape:?}", self.plan.input_hw.0, self.plan.input_hw.1),
            ));
        }
        let stem = self.stem.forward(s, x)?;
        let (mut pp, mut p) = (stem, stem);
        for cell in &self.cells {
            let a = alphas.map(|a| a.cell(cell.spec.reduction));
            let out = cell.forward(s, pp, p, a)?;
            pp = p;
            p = out;
        }
        self.classifier.forward(s, p)
    }
}
