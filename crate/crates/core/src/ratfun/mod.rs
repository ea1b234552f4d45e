//! Polynomial and rational-function algebra over the Laplace variable.

mod hurwitz;
mod poly;
mod rational;
mod roots;

pub use hurwitz::{
    classify_spectrum, hurwitz_stable, routh_verdict, HurwitzReport, SpectrumVerdict, Stability, ROUTH_MAX_DEGREE,
};
pub use poly::{poly_arith, PolyOp, Polynomial};
pub use rational::{rf_arith, rf_eval, RationalFunction, RfOp, CANCELLATION_TOL};
pub use roots::{poly_roots, root_residual, RootSet, ROOT_RESIDUAL_TOL};
