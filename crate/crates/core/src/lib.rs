//! Numerical laboratory for the linearized Becker-Döring equations.
//!
//! The crate is organised bottom-up:
//!
//! * [`coefficients`]: rate families `(a_i, b_i)` and assumption checks,
//! * [`equilibrium`]: detailed-balance equilibria and the mass/density map,
//! * [`operators`]: truncated linearized operators in mass-weighted
//!   coordinates, norms and the mass functional,
//! * [`dynamics`]: linear semigroups (explicit and implicit) and the nonlinear
//!   system,
//! * [`spectral`]: imaginary-axis quasimodes and resolvent certificates,
//! * [`cutoff`]: characteristics, supersolutions and pulse/cutoff experiments.
//!
//! Sweeps over independent parameter cells go through [`exec`], which uses
//! rayon when the `parallel` feature is enabled and a plain loop otherwise.

pub mod coefficients;
pub mod cutoff;
pub mod dynamics;
pub mod equilibrium;
pub mod error;
pub mod exec;
pub mod operators;
pub mod spectral;

pub use coefficients::{check_assumptions, AssumptionReport, CoefficientModel, ModelKind};
pub use equilibrium::{compute_q, mu_s_estimate, solve_z, EquilibriumState};
pub use error::{Error, Result};
pub use operators::{Coords, NormSpec, OperatorKind, OperatorMatrix, StateVector};
