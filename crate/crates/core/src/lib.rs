//! Numerical laboratory for the planar Lane-Emden Dirichlet problem at large
//! exponent: grid and radial solvers, blow-up diagnostics, Green and
//! Kirchhoff-Routh machinery.

// Guards written as !(x > 0.0) deliberately reject NaN along with the
// out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bubbles;
pub mod elliptic;
pub mod geometry;
pub mod greenfn;
pub mod lane_emden;
pub mod radial_oracle;
pub mod rng;
