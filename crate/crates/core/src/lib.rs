//! Numerical laboratory for the weighted ultrafast diffusion equation
//!
//! ```text
//! ∂t f = -r ∂x( f ∂x( ρ / f^(r+1) ) )
//! ```
//!
//! on a truncated line, together with the one-dimensional optimal transport
//! machinery and the functional inequalities that control its convergence to
//! the equilibrium `m = e^{-V}`.
//!
//! Module map:
//!
//! - [`density`]: uniform grids, trapezoid quadrature, CDF / quantile, cone ratios.
//! - [`potential`]: built-in potentials `V`, the equilibrium `m`, the weight `ρ`
//!   and the isoperimetric ratio constant `C_V`.
//! - [`ot1d`]: monotone transport maps, `W₂`, displacement interpolation,
//!   isoperimetric profiles and a brute-force coupling oracle.
//! - [`functional`]: free energy, dissipation, `L²` gap, Poincaré estimators.
//! - [`solver`]: conservative explicit finite-volume time stepping.
//! - [`verify`]: proof constants, inequality audits and the decay fit.

// `!(x > 0.0)` rejects NaN along with nonpositive values; index loops mirror
// the stencils.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod density;
pub mod error;
pub mod functional;
pub mod ot1d;
pub mod potential;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
