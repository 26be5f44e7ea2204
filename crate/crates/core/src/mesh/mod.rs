//! Discrete Lagrangian immersions of the n-torus into flat C^n (n = 1, 2)
//! and their first- and second-order geometry.

mod geometry;
mod grid;
mod immersion;
mod scenario;

pub use geometry::{
    align_branch, angle_gradient_residual, compute_geometry, compute_geometry_with,
    lagrangian_residual, mean_curvature_field, step_geometry, unwrap_angle, GeometryCache,
    StepGeometry, VertexGeometry, PAR_CHUNK,
};
pub use grid::{Derivs, Grid, Stencil};
pub use immersion::{AmbientSpace, Immersion};
pub use scenario::{build_scenario, Scenario};
