//! Optimization-based inference with learned loss landscapes.
//!
//! This crate inverts differentiable forward models by gradient descent and
//! accelerates that inversion by training a mapping network that reshapes
//! the search space into one where descent converges in a handful of steps.
//!
//! The pieces:
//!
//! - [`tensor`]: dense f64 tensors with tape-based reverse-mode gradients
//! - [`models`]: the mapping network and the forward models it wraps
//! - [`objective`]: reconstruction losses with optional observation masks
//! - [`optim`]: sgd / adam / adamw update rules
//! - [`infer`]: descent loops in the original space and the remapped space
//! - [`trainer`]: trajectory collection, replay buffer, alternating training
//! - [`analysis`]: PCA landscape grids, convergence curves, ablations
//! - [`oracle`]: finite-difference and grid-search referees
//! - [`io`]: structured text containers for weights, checkpoints, fixtures
//! - [`config`]: experiment presets and the flat key-value config format

pub mod analysis;
pub mod check;
pub mod config;
pub mod error;
pub mod infer;
pub mod io;
pub mod models;
pub mod objective;
pub mod optim;
pub mod oracle;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
