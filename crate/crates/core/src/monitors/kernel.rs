use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowState;
use crate::mesh::AmbientSpace;
use crate::vector::{axpy, dot, load, norm, norm_sq, scale, sub, V4, ZERO};

/// Center, reference time and optional cutoff radius of the backward heat
/// kernel and the cutoff function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub center: Vec<f64>,
    pub reference_time: f64,
    /// `None` means phi = 1 everywhere.
    #[serde(default)]
    pub cutoff_radius: Option<f64>,
}

/// q(s) = 1 - 10 s^3 + 15 s^4 - 6 s^5 on [0, 1]; C^2 with q(0) = 1, q(1) = 0.
pub fn cutoff_profile(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

/// q'(s) = -30 s^2 (1 - s)^2.
pub fn cutoff_profile_derivative(s: f64) -> f64 {
    if !(0.0..=1.0).contains(&s) {
        return 0.0;
    }
    -30.0 * s * s * (1.0 - s) * (1.0 - s)
}

impl KernelSpec {
    pub fn new(center: &[f64], reference_time: f64, cutoff_radius: Option<f64>) -> Result<Self> {
        let k = KernelSpec {
            center: center.to_vec(),
            reference_time,
            cutoff_radius,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.center.len(), 2 | 4) || self.center.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(
                "kernel center must be a finite point of R^2 or R^4".into(),
            ));
        }
        if !self.reference_time.is_finite() {
            return Err(Error::InvalidParameter(
                "reference time must be finite".into(),
            ));
        }
        if let Some(r) = self.cutoff_radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::InvalidParameter(
                    "cutoff radius must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.center.len() / 2
    }

    pub fn center_v4(&self) -> V4 {
        load(&self.center)
    }

    /// t0 - t, refusing evaluation times at or after t0.
    pub fn tau(&self, t: f64) -> Result<f64> {
        let tau = self.reference_time - t;
        if tau > 0.0 {
            Ok(tau)
        } else {
            Err(Error::TimeNotBeforeReference {
                t,
                t0: self.reference_time,
            })
        }
    }

    /// phi(X): 1 on B_r(X0), 0 outside B_2r(X0).
    pub fn cutoff(&self, x: &V4) -> f64 {
        match self.cutoff_radius {
            None => 1.0,
            Some(r) => {
                let d = norm(&sub(x, &self.center_v4()));
                cutoff_profile((d - r) / r)
            }
        }
    }

    pub fn cutoff_gradient(&self, x: &V4) -> V4 {
        match self.cutoff_radius {
            None => ZERO,
            Some(r) => {
                let v = sub(x, &self.center_v4());
                let d = norm(&v);
                let dq = cutoff_profile_derivative((d - r) / r);
                if dq == 0.0 || d == 0.0 {
                    ZERO
                } else {
                    scale(&v, dq / (r * d))
                }
            }
        }
    }

    /// Radius beyond which phi * rho vanishes to double precision.
    pub fn support_radius(&self, tau: f64) -> f64 {
        let gauss = 12.5 * tau.sqrt();
        match self.cutoff_radius {
            None => gauss,
            Some(r) => gauss.min(2.0 * r),
        }
    }
}

/// Heat kernel (4 pi tau)^{-n/2} exp(-|X - X0|^2 / (4 tau)).
#[inline]
pub fn heat_kernel(d_sq: f64, tau: f64, n: usize) -> f64 {
    (4.0 * PI * tau).powf(-(n as f64) / 2.0) * (-d_sq / (4.0 * tau)).exp()
}

pub fn backward_kernel(x: &[f64], spec: &KernelSpec, t: f64) -> Result<f64> {
    spec.validate()?;
    if x.len() != spec.center.len() {
        return Err(Error::InvalidParameter(
            "point and center dimensions differ".into(),
        ));
    }
    let tau = spec.tau(t)?;
    let d = norm_sq(&sub(&load(x), &spec.center_v4()));
    Ok(heat_kernel(d, tau, spec.n()))
}

/// One quadrature point of a surface measure with the data the monitors
/// need.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasureSample {
    pub point: V4,
    pub weight: f64,
    pub cos_theta: f64,
    pub mean_curvature: V4,
    pub grad_cos_theta: V4,
    /// Orthonormal tangent basis (first n entries).
    pub tangents: [V4; 2],
}

impl MeasureSample {
    pub fn normal_part(&self, v: &V4, n: usize) -> V4 {
        let mut out = *v;
        for e in self.tangents.iter().take(n) {
            out = axpy(&out, -dot(v, e), e);
        }
        out
    }
}

/// A weighted sample of a surface, possibly in a flat torus. Integrals of
/// ambient functions run over all lattice images of the surface, which is
/// the integral over its periodic lift.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedSurface {
    pub n: usize,
    pub periods: Option<Vec<f64>>,
    pub samples: Vec<MeasureSample>,
}

impl WeightedSurface {
    pub fn from_state(state: &FlowState) -> Self {
        let geo = &state.geometry;
        let w = geo.weights();
        let samples = state
            .immersion
            .positions()
            .iter()
            .zip(&geo.vertices)
            .zip(w)
            .map(|((p, v), w)| MeasureSample {
                point: *p,
                weight: w,
                cos_theta: v.cos_theta,
                mean_curvature: v.mean_curvature,
                grad_cos_theta: v.grad_cos_theta,
                tangents: v.orthonormal_tangent,
            })
            .collect();
        WeightedSurface {
            n: geo.n(),
            periods: state.immersion.ambient().periods.clone(),
            samples,
        }
    }

    pub fn ambient(&self) -> AmbientSpace {
        AmbientSpace {
            complex_dimension: self.n,
            periods: self.periods.clone(),
        }
    }

    /// Translates of `x` by lattice vectors that land within `radius` of
    /// `center`; `x` itself when the ambient is C^n and it is in range.
    pub fn images(&self, x: &V4, center: &V4, radius: f64, out: &mut Vec<V4>) {
        out.clear();
        match &self.periods {
            None => {
                if norm_sq(&sub(x, center)) <= radius * radius {
                    out.push(*x);
                }
            }
            Some(p) => {
                let range = |k: usize| {
                    let lo = ((center[k] - x[k] - radius) / p[k]).ceil() as i64;
                    let hi = ((center[k] - x[k] + radius) / p[k]).floor() as i64;
                    lo..=hi
                };
                let r0 = range(0);
                let r1 = if self.n == 2 { range(1) } else { 0..=0 };
                for m0 in r0 {
                    for m1 in r1.clone() {
                        let mut y = *x;
                        y[0] += m0 as f64 * p[0];
                        if self.n == 2 {
                            y[1] += m1 as f64 * p[1];
                        }
                        if norm_sq(&sub(&y, center)) <= radius * radius {
                            out.push(y);
                        }
                    }
                }
            }
        }
    }
}

/// Integrals of one surface against one kernel at one time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KernelIntegrals {
    /// Integral of phi rho / v.
    pub psi: f64,
    /// Integral of phi rho.
    pub phi: f64,
    /// Integral of (phi rho / v)(2|grad v|^2/v^2 + |H + X^perp/2tau|^2 + |H|^2/2).
    pub dissipation: f64,
    /// As `dissipation` with |H|^2 in place of |H|^2/2.
    pub dissipation_full: f64,
    /// Integral of (phi rho / v) |grad v|^2 / v^2.
    pub gradient_term: f64,
    /// Integral of (phi rho / v) |H + X^perp/2tau|^2.
    pub shrinker_term: f64,
    /// Integral of (phi rho / v) |H|^2.
    pub mean_curvature_term: f64,
}

/// Evaluate the kernel integrals; with `need_weight` the 1/v weight must be
/// defined on the support.
pub fn kernel_integrals(
    surf: &WeightedSurface,
    spec: &KernelSpec,
    tau: f64,
    need_weight: bool,
) -> Result<KernelIntegrals> {
    let n = surf.n;
    if spec.n() != n {
        return Err(Error::Dimension {
            expected: spec.n().to_string(),
            got: n,
        });
    }
    let c = spec.center_v4();
    let radius = spec.support_radius(tau);
    let mut acc = KernelIntegrals::default();
    let mut imgs = Vec::new();
    for (idx, s) in surf.samples.iter().enumerate() {
        surf.images(&s.point, &c, radius, &mut imgs);
        for x in &imgs {
            let phi = spec.cutoff(x);
            if phi <= 0.0 {
                continue;
            }
            let d = sub(x, &c);
            let rho = heat_kernel(norm_sq(&d), tau, n);
            let wr = s.weight * phi * rho;
            acc.phi += wr;
            if !need_weight {
                continue;
            }
            let v = s.cos_theta;
            if !(v > 0.0) {
                return Err(Error::WeightUndefined {
                    vertex: idx,
                    cos_theta: v,
                });
            }
            let h2 = norm_sq(&s.mean_curvature);
            let shr = norm_sq(&axpy(&s.mean_curvature, 0.5 / tau, &s.normal_part(&d, n)));
            let grad = norm_sq(&s.grad_cos_theta) / (v * v);
            let wv = wr / v;
            acc.psi += wv;
            acc.dissipation += wv * (2.0 * grad + shr + 0.5 * h2);
            acc.dissipation_full += wv * (2.0 * grad + shr + h2);
            acc.gradient_term += wv * grad;
            acc.shrinker_term += wv * shr;
            acc.mean_curvature_term += wv * h2;
        }
    }
    Ok(acc)
}

/// Psi = integral of (1/cos theta) phi rho over the surface at time state.t.
pub fn weighted_psi(state: &FlowState, spec: &KernelSpec) -> Result<f64> {
    spec.validate()?;
    let tau = spec.tau(state.t)?;
    Ok(kernel_integrals(&WeightedSurface::from_state(state), spec, tau, true)?.psi)
}

/// Phi = integral of phi rho over the surface at time state.t.
pub fn gaussian_density(state: &FlowState, spec: &KernelSpec) -> Result<f64> {
    spec.validate()?;
    let tau = spec.tau(state.t)?;
    Ok(kernel_integrals(&WeightedSurface::from_state(state), spec, tau, false)?.phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_scenario, Stencil};

    #[test]
    fn cutoff_profile_is_c2_bump() {
        assert_eq!(cutoff_profile(0.0), 1.0);
        assert_eq!(cutoff_profile(1.0), 0.0);
        assert_eq!(cutoff_profile(-3.0), 1.0);
        assert_eq!(cutoff_profile(4.0), 0.0);
        for k in 1..100 {
            let s = k as f64 / 100.0;
            let fd = (cutoff_profile(s + 1e-6) - cutoff_profile(s - 1e-6)) / 2e-6;
            assert!((fd - cutoff_profile_derivative(s)).abs() < 1e-8);
        }
        assert_eq!(cutoff_profile_derivative(0.0), 0.0);
        assert_eq!(cutoff_profile_derivative(1.0), 0.0);
    }

    #[test]
    fn backward_kernel_values() {
        let spec = KernelSpec::new(&[0.0, 0.0], 0.25, None).unwrap();
        let at0 = backward_kernel(&[0.0, 0.0], &spec, 0.0).unwrap();
        assert!((at0 - PI.powf(-0.5)).abs() < 1e-15);
        let at1 = backward_kernel(&[1.0, 0.0], &spec, 0.0).unwrap();
        assert!((at1 - PI.powf(-0.5) * (-1f64).exp()).abs() < 1e-15);
        assert_eq!(backward_kernel(&[1e3, 0.0], &spec, 0.0).unwrap(), 0.0);
        assert!(matches!(
            backward_kernel(&[0.0, 0.0], &spec, 0.25),
            Err(Error::TimeNotBeforeReference { .. })
        ));
    }

    #[test]
    fn flat_plane_psi_is_one() {
        // the flat torus sampled as a graph with zero height is a plane in the lift
        let im = build_scenario("lagrangian_graph", &[0.0, 0.0], 32).unwrap();
        let s = FlowState::new(im, 0.0, Stencil::Central2).unwrap();
        let spec = KernelSpec::new(&[0.3, 1.0, 0.0, 0.0], 0.7, None).unwrap();
        assert!((weighted_psi(&s, &spec).unwrap() - 1.0).abs() < 1e-6);
        assert!((gaussian_density(&s, &spec).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn refuses_undefined_weight() {
        let im = build_scenario("clifford_torus", &[1.0], 16).unwrap();
        let s = FlowState::new(im, 0.0, Stencil::Central2).unwrap();
        let spec = KernelSpec::new(&[0.0; 4], 0.5, None).unwrap();
        assert!(matches!(
            weighted_psi(&s, &spec),
            Err(Error::WeightUndefined { .. })
        ));
        // Phi needs no weight
        assert!(gaussian_density(&s, &spec).is_ok());
    }

    #[test]
    fn images_cover_ball() {
        let surf = WeightedSurface {
            n: 2,
            periods: Some(vec![1.0, 2.0]),
            samples: Vec::new(),
        };
        let mut out = Vec::new();
        surf.images(&[0.1, 0.1, 0.0, 0.0], &ZERO, 1.05, &mut out);
        // x offsets -1, 0 with y offset 0
        assert_eq!(out.len(), 2);
        surf.images(&[0.1, 0.1, 0.0, 0.0], &ZERO, 2.5, &mut out);
        assert!(out.iter().all(|y| norm(y) <= 2.5));
        assert!(out.contains(&[0.1, -1.9, 0.0, 0.0]));
    }
}
