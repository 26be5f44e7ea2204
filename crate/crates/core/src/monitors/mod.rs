//! Integral functionals along a flow: the backward heat kernel, the weighted
//! functional Psi, the Gaussian density Phi, volume-density bounds and the
//! first variation of the area measure.
//!
//! The cutoff is phi(X) = q((|X - X0| - r) / r) with the quintic
//! q(s) = 1 - 10 s^3 + 15 s^4 - 6 s^5 clamped to [0, 1].

mod kernel;
mod report;

pub use kernel::{
    backward_kernel, cutoff_profile, cutoff_profile_derivative, gaussian_density, heat_kernel,
    kernel_integrals, weighted_psi, KernelIntegrals, KernelSpec, MeasureSample, WeightedSurface,
};
pub use report::{
    area_in_ball, c_constant, calibrate_psi_tolerance, density_lower_bound,
    first_variation_residual, first_variation_residual_on, psi_monotonicity_report,
    unit_ball_volume, volume_density_bound, DensityBoundReport, DensityBoundRow, PsiPair,
    PsiReport, PsiSample, DENSITY_SPREAD_BOUND,
};
