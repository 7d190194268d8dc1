//! Dense arithmetic, reverse-mode differentiation, Hessian-vector products
//! and a damped conjugate-gradient solver.

mod cg;
mod diff;
mod graph;
mod matrix;
mod params;
mod scalar;

pub use cg::{cg_solve, CgOptions, CgSolution};
pub use diff::{
    finite_diff_check, gradient, hvp, loss_value, Evaluation, FdReport, Objective, SegmentCheck,
    WeightDecay,
};
pub use graph::{Gradients, Graph, Var};
pub use matrix::Matrix;
pub use params::{ParamVars, ParamVector, Segment};
pub use scalar::{Dual, Scalar};
