//! Differentiable cell search over a proxy supernet, with the architecture
//! step scaled by a complexity-driven coefficient.

pub mod bilevel;
pub mod enhance;
pub mod search;
pub mod supernet;

pub use bilevel::{apply_arch_update, arch_gradient, mixed_hvp_fd, ArchGradient, ArchMode, Bilevel, LossGrads};
pub use enhance::{fit_theta1, grad_theta, phi, sigma, ComplexityFit, ComplexityLossHistory, EnhanceRecord, Enhancer, DELTA_Y_GUARD};
pub use search::{
    progressive_search, progressive_search_with, read_trace_csv, write_trace_csv, BlockSearchConfig, BlockSearchOutcome,
    EpochReport, StagePlan, TraceRow,
};
pub use supernet::Supernet;
