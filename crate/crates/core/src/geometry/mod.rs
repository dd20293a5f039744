//! Discrete Riemannian geometry on the slab grid.

pub mod boundary;
pub mod curvature;
pub mod dense;
pub mod field;
pub mod io;

pub use boundary::{
    boundary_mean_curvature, cutoff, extend_boundary_field, extend_mean_curvature_trace, extend_pair,
    normal_derivative, outward_normal,
};
pub use curvature::{christoffels, rel_eigenvalues, ricci_scalar, schouten_t, Christoffels, CurvatureBundle};
pub use field::{BoundaryField, EigenField, MetricField, ScalarField, TensorField};
