//! Multi-objective neural architecture search.
//!
//! The search runs in two stages. A differentiable block-level search trains
//! a small supernet whose mixed edges are softmax-weighted sums of twelve
//! candidate operations; the architecture gradient is amplified when recent
//! steps lowered both validation loss and expected parameter count. The
//! resulting normal/reduction cells are then stacked by an NSGA-II search
//! over six macro variables (stem width, three stage depths, two channel
//! multipliers), trading validation error against parameter count, and a
//! knee-point rule picks one network from the final Pareto front.
//!
//! Everything, including the tensor engine and reverse-mode autodiff, is
//! implemented here in plain Rust with `f64` arithmetic.
//!
//! Runnable walkthroughs live in `crates/core/examples/`.
#![allow(clippy::needless_range_loop)]

pub mod block_search;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod evo_search;
pub mod network;
pub mod search_space;
pub mod tensor;

pub use error::{Error, Result};
