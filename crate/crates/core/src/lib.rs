//! Multi-task residual networks with a learned, per-task select-or-skip
//! policy over residual blocks.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`] and [`graph`]: a small reverse-mode autodiff engine over
//!   dense `f64` tensors, with [`optim`] providing SGD and Adam.
//! - [`policy`]: policy logits, Gumbel sampling, soft/hard decisions,
//!   temperature annealing and the curriculum mask.
//! - [`network`]: the shared residual trunk with per-task heads.
//! - [`objectives`]: task losses and the sparsity/sharing regularizers.
//! - [`trainer`]: warm-up, alternating policy learning, sample-and-retrain
//!   and the baselines.
//! - [`evaluation`] and [`report`]: metrics, relative performance, task
//!   correlation and the exported artifacts.
//! - [`synth`]: synthetic multi-task benchmarks with planted sharing
//!   structure.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod network;
pub mod objectives;
pub mod optim;
pub mod policy;
pub mod report;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use tensor::{ParamId, ParamStore, Tensor};
