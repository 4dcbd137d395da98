//! Candidate operations, the relaxed cell DAG and discrete genotypes.

pub mod cell;
pub mod ops;

pub use cell::{
    derive_genotype, mixed_edge_forward, prune_ops, ArchParams, CellAlpha, CellEdge, CellLayout, CellModule, CellSpec,
    EdgeAlpha, Gene, Genotype, Preprocess,
};
pub use ops::{op_flops, op_param_count, CandidateOp, OpInstance};
