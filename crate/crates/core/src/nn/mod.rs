//! Differentiable numeric substrate: tape autodiff, layer kernels,
//! finite-difference checking and the Adam optimizer.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod param;

pub use adam::{Adam, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use kernels::Padding;
pub use param::{ParamId, ParamStore, Parameter};
