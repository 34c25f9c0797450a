//! Sectional solver and verification harness for the collision-induced
//! breakage (nonlinear fragmentation) equation
//!
//! ```text
//! d/dt f(t,x) = 1/2 int int b(x, y, z) K(y, z) f(t,y) f(t,z) dz dy
//!               - int K(x,y) f(t,x) f(t,y) dy
//! ```
//!
//! with power-law collision kernels `K(x,y) = x^a y^b + x^b y^a` and
//! power-law daughter distributions. The discretization is a
//! conservation-exact sectional scheme on a geometric size grid; the
//! integrator is an adaptive embedded Runge-Kutta pair with positivity
//! handling and event detection for number blow-up and shattering onset.
//! Analytic predictions (existence horizons, number-moment envelopes, the
//! shattering time bound) are evaluated alongside every run and checked by
//! the bundled verification suite.

pub mod config;
pub mod diagnostics;
pub mod driver;
pub mod error;
pub mod grid;
pub mod integrator;
pub mod model;
pub mod numeric;
pub mod operator;
pub mod verify;

pub use error::{Error, Result};
