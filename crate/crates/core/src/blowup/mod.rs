//! Blow-up analysis about a singular point: parabolic and time-dependent
//! rescalings, the rescaled-flow identities, density ratios and decay
//! integrals, and tests of tangent-cone structure on point clouds (plane
//! fitting, angle constancy, a complex-structure witness, flatness).

mod cloud;
mod density;
mod identities;
mod planes;

pub use cloud::{
    lambda_rescale, orthonormalize, plane_union_cloud, rescale_immersion, scaling_identity_defect,
    state_at, time_rescale, time_rescale_about, witness_plane_pair, CloudScale, CloudSource,
    PlaneSpec, RescaledCloud, TIME_RESCALE_KEEP,
};
pub use density::{
    ball_integrals, density_ratio, integral_decay_report, is_nondecreasing, isoperimetric_profile,
    nearest_sample_distance, window_integrals, DecayReport, DecayRow, IsoperimetricRow,
    DECAY_TIME_SAMPLES,
};
pub use identities::{
    rescaled_flow_residual, rescaled_psi_monotonicity, rescaled_theta_identity,
    self_shrinker_residual, RescaledPsiReport, RescaledPsiRow,
};
pub use planes::{
    angle_constancy, complex_structure_witness, fit_planes, flatness_check, principal_angle,
    projector, projector_distance, AngleConstancy, AngleParams, FitMethod, FitParams,
    FlatnessReport, PlaneCluster, PlaneRecord, WitnessReport, WITNESS_TOLERANCE,
};

use crate::error::Result;
use crate::flow::FlowTrace;
use crate::vector::{norm, sub};

/// Dyadic scales 2^k for k = 0..=k_max.
pub fn lambda_sequence(k_max: u32) -> Vec<f64> {
    (0..=k_max).map(|k| 2f64.powi(k as i32)).collect()
}

/// Longest grid edge of the lambda-rescaled surface at rescaled time t with
/// an endpoint inside B_R(0); zero when no vertex lies in the ball.
pub fn max_rescaled_spacing(trace: &FlowTrace, lambda: f64, t: f64, radius: f64) -> Result<f64> {
    let cloud = lambda_rescale(trace, lambda, t)?;
    let im = cloud.immersion.as_ref().expect("rescaled from a grid");
    let g = im.grid();
    let shifts = [im.seam_shift(0), im.seam_shift(1)];
    let mut worst: f64 = 0.0;
    for (v, p) in im.positions().iter().enumerate() {
        if norm(p) > radius {
            continue;
        }
        let (i, j) = g.coords(v);
        for d in 0..g.n {
            let (di, dj) = if d == 0 { (1, 0) } else { (0, 1) };
            let (u, w) = g.neighbor(i, j, di, dj);
            worst = worst.max(norm(&sub(&im.lifted(u, w, &shifts), p)));
        }
    }
    Ok(worst)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use std::sync::OnceLock;

    use crate::flow::{run, FlowControls, FlowTrace, Until};
    use crate::mesh::build_scenario;

    fn singular(name: &str, res: usize, stride: usize) -> FlowTrace {
        let im = build_scenario(name, &[1.0], res).unwrap();
        let c = FlowControls {
            snapshot_stride: stride,
            ..FlowControls::default()
        };
        run(im, Until::SINGULARITY, &c).unwrap()
    }

    pub fn circle() -> &'static FlowTrace {
        static T: OnceLock<FlowTrace> = OnceLock::new();
        T.get_or_init(|| singular("circle", 64, 50))
    }

    pub fn clifford() -> &'static FlowTrace {
        static T: OnceLock<FlowTrace> = OnceLock::new();
        T.get_or_init(|| singular("clifford_torus", 32, 20))
    }
}
