//! Cell DAGs: relaxed architecture parameters, pruning, genotype derivation
//! and the instantiated cell used by both the supernet and final networks.
//!
//! Nodes `0` and `1` are the two cell inputs, nodes `2..=N-2` are the
//! intermediates and node `N-1` is the channel concatenation of all
//! intermediates. Every intermediate `j` has an incoming edge from each `i < j`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops::{CandidateOp, OpInstance};
use crate::error::{Error, Result};
use crate::tensor::graph::softmax;
use crate::tensor::{ParamId, ParamStore, Session, Tensor, Var};

/// Shape of a cell DAG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSpec {
    pub num_nodes: usize,
    pub reduction: bool,
}

impl CellSpec {
    pub fn new(num_nodes: usize, reduction: bool) -> Result<Self> {
        if num_nodes < 4 {
            return Err(Error::InvalidArgument(format!(
                "a cell needs at least 4 nodes (two inputs, one intermediate, one output), got {num_nodes}"
            )));
        }
        Ok(Self { num_nodes, reduction })
    }

    pub fn intermediates(&self) -> usize {
        self.num_nodes - 3
    }

    /// Every `(from, to)` edge in canonical order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        edge_list(self.num_nodes)
    }
}

pub(crate) fn edge_list(num_nodes: usize) -> Vec<(usize, usize)> {
    (2..num_nodes - 1).flat_map(|to| (0..to).map(move |from| (from, to))).collect()
}

/// Relaxed weights on one edge over its currently active ops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeAlpha {
    pub from: usize,
    pub to: usize,
    pub ops: Vec<CandidateOp>,
    pub alpha: Vec<f64>,
}

impl EdgeAlpha {
    pub fn weights(&self) -> Vec<f64> {
        softmax(&self.alpha)
    }

    /// Index into `ops` of the largest alpha, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &a) in self.alpha.iter().enumerate() {
            if a > self.alpha[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAlpha {
    pub num_nodes: usize,
    pub edges: Vec<EdgeAlpha>,
}

/// Architecture parameters for the normal and reduction cell types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchParams {
    pub normal: CellAlpha,
    pub reduce: CellAlpha,
}

impl CellAlpha {
    fn init<R: Rng + ?Sized>(num_nodes: usize, ops: &[CandidateOp], noise: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, noise).expect("finite noise");
        let edges = edge_list(num_nodes)
            .into_iter()
            .map(|(from, to)| EdgeAlpha {
                from,
                to,
                ops: ops.to_vec(),
                alpha: ops.iter().map(|_| normal.sample(rng)).collect(),
            })
            .collect();
        Self { num_nodes, edges }
    }
}

impl ArchParams {
    /// Near-uniform initialization: zeros plus Gaussian noise of std `noise`.
    pub fn init<R: Rng + ?Sized>(num_nodes: usize, noise: f64, rng: &mut R) -> Result<Self> {
        CellSpec::new(num_nodes, false)?;
        Ok(Self {
            normal: CellAlpha::init(num_nodes, &CandidateOp::ALL, noise, rng),
            reduce: CellAlpha::init(num_nodes, &CandidateOp::ALL, noise, rng),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.normal.num_nodes
    }

    pub fn cell(&self, reduction: bool) -> &CellAlpha {
        if reduction {
            &self.reduce
        } else {
            &self.normal
        }
    }

    pub fn edges(&self) -> impl Iterator<Item = &EdgeAlpha> {
        self.normal.edges.iter().chain(&self.reduce.edges)
    }

    fn edges_mut(&mut self) -> impl Iterator<Item = &mut EdgeAlpha> {
        self.normal.edges.iter_mut().chain(&mut self.reduce.edges)
    }

    /// Active op count, if every edge has the same number.
    pub fn ops_per_edge(&self) -> Option<usize> {
        let mut it = self.edges().map(|e| e.ops.len());
        let first = it.next()?;
        it.all(|n| n == first).then_some(first)
    }

    /// Normal edges first, then reduction edges, each edge's entries in op order.
    pub fn flatten(&self) -> Vec<f64> {
        self.edges().flat_map(|e| e.alpha.iter().copied()).collect()
    }

    pub fn len(&self) -> usize {
        self.edges().map(|e| e.alpha.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::shape("arch params", format!("{} values for {} entries", flat.len(), self.len())));
        }
        let mut offset = 0;
        for e in self.edges_mut() {
            let n = e.alpha.len();
            e.alpha.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for (cell, name) in [(&self.normal, "normal"), (&self.reduce, "reduce")] {
            let expected = edge_list(cell.num_nodes);
            if cell.edges.len() != expected.len() {
                return Err(Error::InvalidArgument(format!("{name}: {} edges, expected {}", cell.edges.len(), expected.len())));
            }
            for (e, (from, to)) in cell.edges.iter().zip(expected) {
                if (e.from, e.to) != (from, to) {
                    return Err(Error::InvalidArgument(format!("{name}: edge ({},{}) out of order", e.from, e.to)));
                }
                if e.ops.is_empty() || e.ops.len() != e.alpha.len() {
                    return Err(Error::InvalidArgument(format!(
                        "{name}: edge ({from},{to}) has {} ops and {} alphas",
                        e.ops.len(),
                        e.alpha.len()
                    )));
                }
                if e.alpha.iter().any(|a| !a.is_finite()) {
                    return Err(Error::Numeric(format!("{name}: non-finite alpha on edge ({from},{to})")));
                }
            }
        }
        Ok(())
    }
}

/// Removes the `drop_k` smallest-alpha ops from every edge.
///
/// Ties at the boundary drop the lower op index first. Surviving alphas keep
/// their raw values.
pub fn prune_ops(alpha: &ArchParams, drop_k: usize) -> Result<ArchParams> {
    let mut out = alpha.clone();
    for e in out.edges_mut() {
        if drop_k >= e.ops.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot drop {drop_k} of {} ops on edge ({},{})",
                e.ops.len(),
                e.from,
                e.to
            )));
        }
        let mut order: Vec<usize> = (0..e.ops.len()).collect();
        order.sort_by(|&a, &b| {
            e.alpha[a]
                .partial_cmp(&e.alpha[b])
                .expect("finite alphas")
                .then(e.ops[a].index().cmp(&e.ops[b].index()))
        });
        let mut keep = vec![true; e.ops.len()];
        for &i in &order[..drop_k] {
            keep[i] = false;
        }
        let (ops, alphas): (Vec<_>, Vec<_>) = e
            .ops
            .iter()
            .zip(&e.alpha)
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|((o, a), _)| (*o, *a))
            .unzip();
        e.ops = ops;
        e.alpha = alphas;
    }
    Ok(out)
}

/// One retained edge of a discrete cell: `(op, source node)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Gene(pub CandidateOp, pub usize);

/// Discrete description of the normal and reduction cells.
///
/// For intermediate node `j = 2 + k`, entries `2k` and `2k + 1` of each list
/// are its two incoming edges, sorted by source.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Genotype {
    pub normal: Vec<Gene>,
    pub reduce: Vec<Gene>,
    pub nodes: usize,
}

impl Genotype {
    pub fn cell(&self, reduction: bool) -> &[Gene] {
        if reduction {
            &self.reduce
        } else {
            &self.normal
        }
    }

    pub fn validate(&self) -> Result<()> {
        CellSpec::new(self.nodes, false)?;
        let want = 2 * (self.nodes - 3);
        for (genes, name) in [(&self.normal, "normal"), (&self.reduce, "reduce")] {
            if genes.len() != want {
                return Err(Error::InvalidArgument(format!(
                    "genotype {name} has {} edges, expected {want} for {} nodes",
                    genes.len(),
                    self.nodes
                )));
            }
            for (k, pair) in genes.chunks(2).enumerate() {
                let node = k + 2;
                if pair.iter().any(|g| g.1 >= node) {
                    return Err(Error::InvalidArgument(format!("genotype {name}: node {node} has a source >= {node}")));
                }
                if pair[0].1 == pair[1].1 {
                    return Err(Error::InvalidArgument(format!("genotype {name}: node {node} repeats source {}", pair[0].1)));
                }
            }
        }
        Ok(())
    }

    /// Sum of per-op parameter counts over both cells at a node width of `c`.
    pub fn param_count(&self, c: usize) -> usize {
        self.normal
            .iter()
            .chain(&self.reduce)
            .map(|g| super::op_param_count(g.0, c, c))
            .sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let g: Genotype = serde_json::from_str(s)?;
        g.validate()?;
        Ok(g)
    }
}

fn derive_cell(cell: &CellAlpha) -> Vec<Gene> {
    let mut genes = Vec::new();
    for node in 2..cell.num_nodes - 1 {
        let mut incoming: Vec<(f64, usize, CandidateOp)> = cell
            .edges
            .iter()
            .filter(|e| e.to == node)
            .map(|e| {
                let w = e.weights();
                let best = e.argmax();
                (w[best], e.from, e.ops[best])
            })
            .collect();
        incoming.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite").then(a.1.cmp(&b.1)));
        let mut top: Vec<Gene> = incoming.iter().take(2).map(|&(_, src, op)| Gene(op, src)).collect();
        top.sort_by_key(|g| g.1);
        genes.extend(top);
    }
    genes
}

/// Argmax op per edge, then the two strongest incoming edges per node, where
/// strength is the edge's largest softmax weight. Ties go to the lower source.
pub fn derive_genotype(alpha: &ArchParams) -> Result<Genotype> {
    alpha.validate()?;
    let g = Genotype {
        normal: derive_cell(&alpha.normal),
        reduce: derive_cell(&alpha.reduce),
        nodes: alpha.num_nodes(),
    };
    g.validate()?;
    Ok(g)
}

/// `sum_o softmax(alpha)_o * o(x)` over the edge's active ops.
pub fn mixed_edge_forward(s: &mut Session<'_>, x: Var, alpha: Var, ops: &[OpInstance]) -> Result<Var> {
    if ops.is_empty() {
        return Err(Error::InvalidArgument("mixed edge has no active operations".into()));
    }
    if s.graph.value(alpha).numel() != ops.len() {
        return Err(Error::shape(
            "mixed_edge_forward",
            format!("{} alphas for {} ops", s.graph.value(alpha).numel(), ops.len()),
        ));
    }
    let weights = s.graph.softmax(alpha)?;
    let mut acc: Option<Var> = None;
    for (i, op) in ops.iter().enumerate() {
        let y = op.forward(s, x)?;
        let w = s.graph.select(weights, i)?;
        let term = s.graph.scale(y, w)?;
        acc = Some(match acc {
            Some(a) => s.graph.add(a, term)?,
            None => term,
        });
    }
    Ok(acc.expect("non-empty"))
}

/// ReLU -> 1x1 conv -> batch norm mapping a cell input to the node width.
#[derive(Debug, Clone)]
pub struct Preprocess {
    pub stride: usize,
    pub weight: ParamId,
}

impl Preprocess {
    pub fn new<R: Rng + ?Sized>(c_in: usize, c_out: usize, stride: usize, store: &mut ParamStore, name: &str, rng: &mut R) -> Self {
        let std = (2.0 / c_in as f64).sqrt();
        Self {
            stride,
            weight: store.add(name, Tensor::randn(&[c_out, c_in, 1, 1], std, rng)),
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let y = s.graph.relu(x);
        let y = s.graph.conv2d(y, w, self.stride, 1, 1)?;
        s.graph.batch_norm(y)
    }
}

#[derive(Debug, Clone)]
pub struct CellEdge {
    pub from: usize,
    pub to: usize,
    pub ops: Vec<OpInstance>,
}

/// Where a cell's edges come from.
#[derive(Debug, Clone, Copy)]
pub enum CellLayout<'a> {
    /// Every edge carries every active op of the matching [`CellAlpha`].
    Mixed(&'a CellAlpha),
    /// Only the genotype's retained edges, one op each.
    Discrete(&'a [Gene]),
}

/// An instantiated cell with its two input projections.
#[derive(Debug, Clone)]
pub struct CellModule {
    pub spec: CellSpec,
    pub node_channels: usize,
    pub pre0: Preprocess,
    pub pre1: Preprocess,
    pub edges: Vec<CellEdge>,
    /// Input spatial sizes (prev_prev, prev) this cell was built for.
    pub input_hw: [(usize, usize); 2],
}

impl CellModule {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        spec: CellSpec,
        layout: CellLayout<'_>,
        c_prev_prev: usize,
        c_prev: usize,
        node_channels: usize,
        input_hw: [(usize, usize); 2],
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut R,
    ) -> Result<Self> {
        let [pp, p] = input_hw;
        let pre0_stride = if pp == p {
            1
        } else if super::ops::strided(pp.0, 2) == p.0 && super::ops::strided(pp.1, 2) == p.1 {
            2
        } else {
            return Err(Error::shape(
                "cell",
                format!("prev_prev spatial {pp:?} incompatible with prev {p:?}"),
            ));
        };
        let pre0 = Preprocess::new(c_prev_prev, node_channels, pre0_stride, store, &format!("{prefix}.pre0"), rng);
        let pre1 = Preprocess::new(c_prev, node_channels, 1, store, &format!("{prefix}.pre1"), rng);
        let stride_for = |from: usize| if spec.reduction && from < 2 { 2 } else { 1 };
        let mut edges = Vec::new();
        match layout {
            CellLayout::Mixed(cell) => {
                if cell.num_nodes != spec.num_nodes {
                    return Err(Error::InvalidArgument("alpha node count differs from cell spec".into()));
                }
                for e in &cell.edges {
                    let ops = e
                        .ops
                        .iter()
                        .map(|&op| {
                            let name = format!("{prefix}.e{}_{}.{}", e.from, e.to, op);
                            OpInstance::new(op, node_channels, node_channels, stride_for(e.from), store, &name, rng)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    edges.push(CellEdge { from: e.from, to: e.to, ops });
                }
            }
            CellLayout::Discrete(genes) => {
                if genes.len() != 2 * spec.intermediates() {
                    return Err(Error::InvalidArgument("genotype edge count differs from cell spec".into()));
                }
                for (k, gene) in genes.iter().enumerate() {
                    let to = 2 + k / 2;
                    let name = format!("{prefix}.e{}_{to}.{}", gene.1, gene.0);
                    let op = OpInstance::new(gene.0, node_channels, node_channels, stride_for(gene.1), store, &name, rng)?;
                    edges.push(CellEdge {
                        from: gene.1,
                        to,
                        ops: vec![op],
                    });
                }
            }
        }
        Ok(Self {
            spec,
            node_channels,
            pre0,
            pre1,
            edges,
            input_hw,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.spec.intermediates() * self.node_channels
    }

    /// Full cell: project both inputs, then run the DAG.
    pub fn forward(&self, s: &mut Session<'_>, prev_prev: Var, prev: Var, alphas: Option<&[Var]>) -> Result<Var> {
        let x0 = self.pre0.forward(s, prev_prev)?;
        let x1 = self.pre1.forward(s, prev)?;
        self.forward_nodes(s, x0, x1, alphas)
    }

    /// DAG only, on already projected inputs. `alphas` holds one 1-D var
    /// per edge for mixed cells and must be `None` for discrete cells.
    pub fn forward_nodes(&self, s: &mut Session<'_>, x0: Var, x1: Var, alphas: Option<&[Var]>) -> Result<Var> {
        let (a, b) = (s.graph.shape(x0).to_vec(), s.graph.shape(x1).to_vec());
        if a != b {
            return Err(Error::shape("cell", format!("input nodes differ: {a:?} vs {b:?}")));
        }
        if let Some(al) = alphas {
            if al.len() != self.edges.len() {
                return Err(Error::shape("cell", format!("{} alpha vars for {} edges", al.len(), self.edges.len())));
            }
        }
        let mut states = vec![x0, x1];
        for node in 2..self.spec.num_nodes - 1 {
            let mut acc: Option<Var> = None;
            for (i, e) in self.edges.iter().enumerate().filter(|(_, e)| e.to == node) {
                let x = states[e.from];
                let y = match alphas {
                    Some(al) => mixed_edge_forward(s, x, al[i], &e.ops)?,
                    None => e.ops[0].forward(s, x)?,
                };
                acc = Some(match acc {
                    Some(prev) => s.graph.add(prev, y)?,
                    None => y,
                });
            }
            states.push(acc.ok_or_else(|| Error::InvalidArgument(format!("node {node} has no incoming edge")))?);
        }
        s.graph.concat(&states[2..])
    }
}
