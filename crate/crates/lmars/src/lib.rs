//! Least-squares regression over tensor-product hinge (MARS-type) basis
//! functions under an L1 variation budget.
//!
//! The estimator minimizes `sum_i (y_i - f(x_i))^2` over functions of the form
//!
//! ```text
//! f(x) = a0 + sum_terms b * prod_{k in S(alpha)} (x_k - t_k)_+
//! ```
//!
//! subject to a budget `V` on the sum of absolute coefficients of all terms
//! with at least one nonzero knot. Two equivalent formulations are provided:
//! a general-design reduction to a finite LASSO over knots drawn from the
//! design points ([`estimator::fit`]), and a difference-operator formulation
//! for equally spaced lattice designs ([`lattice::fit_lattice`]). A
//! cross-validation driver ([`selection`]) and a simulation harness ([`sim`])
//! sit on top.

pub mod basis;
pub mod cli;
pub mod error;
pub mod estimator;
pub mod lattice;
pub mod rng;
pub mod selection;
pub mod sim;
pub mod solver;
pub mod variation;

pub use basis::{BasisIndex, DomainTag, KnotGrid, MarsModel, MarsTerm};
pub use error::{Error, Result};
pub use estimator::{fit, loss, predict, to_original_domain, FitConfig, ScalingTransform};
pub use lattice::{fit_lattice, h2, reconstruct, v2, v2_via_h2, LatticeField, LatticeShape};
pub use selection::{cross_validate, default_grid, CvConfig, CvResult};
pub use sim::{lattice_design, run_experiment, test_function, Experiment, RiskReport};
pub use solver::{certify, project_l1, solve, LassoProblem, LassoSolution};
pub use variation::{vmars_smooth, SmoothFunction};
