//! Numerical solver and verification harness for fully nonlinear conformal
//! boundary-value problems of negative admissible type on `T^{n-1} x [0,1]`:
//!
//! ```text
//! f(λ_g(W_g^v - A_g^t)) = φ e^{2v}   in M
//! h_g + v_ν = e^v ψ                  on ∂M
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod grid;
pub mod symfunc;

pub use error::{Error, Result};
pub mod conformal;
pub mod estimates;
pub mod fermi;
pub mod geometry;
pub mod pde;
