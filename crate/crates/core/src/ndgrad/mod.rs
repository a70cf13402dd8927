//! Minimal reverse-mode differentiable arrays.
//!
//! A [`Graph`] records every op of one forward call together with its
//! vector-Jacobian product; [`Graph::backward`] replays the record in
//! reverse and accumulates into parent gradients. Values are `f64`,
//! row-major, with explicit shapes.

mod array;
mod attention;
mod conv;
mod gemm;
pub mod gradcheck;
mod graph;
pub mod layers;
mod ops;
mod param;

pub use array::{numel, DiffArray};
pub use attention::{AttnMask, MhaParams};
pub use conv::{resize_bilinear_values, Padding};
pub use gradcheck::{gradcheck, relative_error, GradcheckOptions, GradcheckReport, ParamCheck};
pub use graph::{BackwardFn, GradSink, Gradients, Graph, Var};
pub use ops::{gelu, log_sigmoid, sigmoid};
pub use param::{ParamId, ParamStore, Parameter};
