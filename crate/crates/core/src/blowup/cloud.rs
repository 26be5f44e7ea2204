use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{FlowState, FlowTrace};
use crate::mesh::{compute_geometry_with, Immersion, Stencil};
use crate::monitors::{MeasureSample, WeightedSurface};
use crate::vector::{axpy, load, norm, scale, sub, V4, ZERO};

/// How a cloud was obtained from its source.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CloudScale {
    /// Parabolic rescaling by `lambda`, observed at rescaled time `t`.
    Lambda { lambda: f64, t: f64 },
    /// Time-dependent rescaling F / sqrt(2(T - t)) at s = -log(T - t) / 2.
    Log { s: f64, factor: f64 },
    /// Constructed directly.
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CloudSource {
    pub label: String,
    /// Flow time of the source snapshot.
    pub t: f64,
}

/// Weighted point samples of a rescaled surface with the geometric data
/// carried over from the source. Derivative quantities are rescaled
/// (H by 1/factor, |A|^2 by 1/factor^2); angles and tangent planes are
/// scale invariant.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RescaledCloud {
    pub n: usize,
    pub scale: CloudScale,
    pub source: CloudSource,
    pub periods: Option<Vec<f64>>,
    pub points: Vec<V4>,
    pub weights: Vec<f64>,
    pub tangent_planes: Vec<[V4; 2]>,
    pub theta: Vec<f64>,
    pub cos_theta: Vec<f64>,
    pub mean_curvature: Vec<V4>,
    pub grad_cos_theta: Vec<V4>,
    pub norm_a_sq: Vec<f64>,
    /// h^a(e_b, e_c) in the orthonormal tangent frame.
    pub sff: Vec<[[[f64; 2]; 2]; 2]>,
    /// The rescaled immersion when the cloud comes from a grid.
    #[serde(skip)]
    pub immersion: Option<Immersion>,
}

/// X -> factor (X - center), dilating the lattice as well.
pub fn rescale_immersion(im: &Immersion, center: &V4, factor: f64) -> Result<Immersion> {
    let positions = im
        .positions()
        .iter()
        .map(|p| scale(&sub(p, center), factor))
        .collect();
    Immersion::new(
        im.ambient().scaled(factor),
        &im.grid_shape(),
        positions,
        im.winding(),
    )
}

impl RescaledCloud {
    /// Cloud of X -> factor (X - center) applied to a flow state.
    pub fn from_state(
        state: &FlowState,
        center: &V4,
        factor: f64,
        scale_info: CloudScale,
        label: &str,
    ) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "rescaling factor {factor} must be positive"
            )));
        }
        let geo = &state.geometry;
        let n = geo.n();
        let im = rescale_immersion(&state.immersion, center, factor)?;
        let wf = factor.powi(n as i32);
        let w = geo.weights();
        let inv = 1.0 / factor;
        let vs = &geo.vertices;
        Ok(RescaledCloud {
            n,
            scale: scale_info,
            source: CloudSource {
                label: label.to_string(),
                t: state.t,
            },
            periods: im.ambient().periods.clone(),
            points: im.positions().to_vec(),
            weights: w.iter().map(|x| x * wf).collect(),
            tangent_planes: vs.iter().map(|v| v.orthonormal_tangent).collect(),
            theta: vs.iter().map(|v| v.theta).collect(),
            cos_theta: vs.iter().map(|v| v.cos_theta).collect(),
            mean_curvature: vs.iter().map(|v| scale(&v.mean_curvature, inv)).collect(),
            grad_cos_theta: vs.iter().map(|v| scale(&v.grad_cos_theta, inv)).collect(),
            norm_a_sq: vs.iter().map(|v| v.norm_a_sq * inv * inv).collect(),
            sff: vs
                .iter()
                .map(|v| {
                    let mut h = v.sff_orthonormal;
                    for a in h.iter_mut() {
                        for r in a.iter_mut() {
                            for x in r.iter_mut() {
                                *x *= inv;
                            }
                        }
                    }
                    h
                })
                .collect(),
            immersion: Some(im),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Weights positive and tangent bases orthonormal within 1e-10.
    pub fn validate(&self) -> Result<()> {
        let m = self.points.len();
        let lens = [
            self.weights.len(),
            self.tangent_planes.len(),
            self.theta.len(),
            self.cos_theta.len(),
            self.mean_curvature.len(),
            self.grad_cos_theta.len(),
            self.norm_a_sq.len(),
            self.sff.len(),
        ];
        if lens.iter().any(|&l| l != m) {
            return Err(Error::InvalidParameter(
                "cloud arrays differ in length".into(),
            ));
        }
        if let Some(k) = self.weights.iter().position(|w| !(*w > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "weight {k} is not positive"
            )));
        }
        for (k, b) in self.tangent_planes.iter().enumerate() {
            for a in 0..self.n {
                for c in 0..self.n {
                    let g = crate::vector::dot(&b[a], &b[c]);
                    let want = if a == c { 1.0 } else { 0.0 };
                    if (g - want).abs() > 1e-10 {
                        return Err(Error::InvalidParameter(format!(
                            "tangent basis {k} is not orthonormal"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn sample(&self, k: usize) -> MeasureSample {
        MeasureSample {
            point: self.points[k],
            weight: self.weights[k],
            cos_theta: self.cos_theta[k],
            mean_curvature: self.mean_curvature[k],
            grad_cos_theta: self.grad_cos_theta[k],
            tangents: self.tangent_planes[k],
        }
    }

    pub fn surface(&self) -> WeightedSurface {
        WeightedSurface {
            n: self.n,
            periods: self.periods.clone(),
            samples: (0..self.len()).map(|k| self.sample(k)).collect(),
        }
    }

    /// Sub-cloud of the given sample indices (no immersion).
    pub fn select(&self, idx: &[usize]) -> Self {
        RescaledCloud {
            n: self.n,
            scale: self.scale,
            source: self.source.clone(),
            periods: self.periods.clone(),
            points: idx.iter().map(|k| self.points[*k]).collect(),
            weights: idx.iter().map(|k| self.weights[*k]).collect(),
            tangent_planes: idx.iter().map(|k| self.tangent_planes[*k]).collect(),
            theta: idx.iter().map(|k| self.theta[*k]).collect(),
            cos_theta: idx.iter().map(|k| self.cos_theta[*k]).collect(),
            mean_curvature: idx.iter().map(|k| self.mean_curvature[*k]).collect(),
            grad_cos_theta: idx.iter().map(|k| self.grad_cos_theta[*k]).collect(),
            norm_a_sq: idx.iter().map(|k| self.norm_a_sq[*k]).collect(),
            sff: idx.iter().map(|k| self.sff[*k]).collect(),
            immersion: None,
        }
    }

    /// Union of two clouds in the same ambient (no immersion).
    pub fn union(&self, other: &Self) -> Result<Self> {
        if self.n != other.n || self.periods != other.periods {
            return Err(Error::InvalidParameter(
                "clouds live in different ambients".into(),
            ));
        }
        let mut out = self.clone();
        out.immersion = None;
        out.points.extend_from_slice(&other.points);
        out.weights.extend_from_slice(&other.weights);
        out.tangent_planes.extend_from_slice(&other.tangent_planes);
        out.theta.extend_from_slice(&other.theta);
        out.cos_theta.extend_from_slice(&other.cos_theta);
        out.mean_curvature.extend_from_slice(&other.mean_curvature);
        out.grad_cos_theta.extend_from_slice(&other.grad_cos_theta);
        out.norm_a_sq.extend_from_slice(&other.norm_a_sq);
        out.sff.extend_from_slice(&other.sff);
        Ok(out)
    }

    /// Apply an orthogonal map of R^{2n} to points, tangents and curvature
    /// vectors. Angles are carried unchanged.
    pub fn rotated(&self, u: &[[f64; 4]; 4]) -> Self {
        let d = 2 * self.n;
        let apply = |v: &V4| {
            let mut out = ZERO;
            for (r, o) in out.iter_mut().enumerate().take(d) {
                *o = (0..d).map(|c| u[r][c] * v[c]).sum();
            }
            out
        };
        let mut out = self.clone();
        out.immersion = None;
        out.points = self.points.iter().map(apply).collect();
        out.tangent_planes = self
            .tangent_planes
            .iter()
            .map(|b| [apply(&b[0]), apply(&b[1])])
            .collect();
        out.mean_curvature = self.mean_curvature.iter().map(apply).collect();
        out.grad_cos_theta = self.grad_cos_theta.iter().map(apply).collect();
        out
    }
}

/// Parabolic blow-up lambda (F(., T + t / lambda^2) - X0) at rescaled time
/// t < 0. Between snapshots the positions are interpolated linearly and the
/// geometry is recomputed.
pub fn lambda_rescale(trace: &FlowTrace, lambda: f64, t: f64) -> Result<RescaledCloud> {
    let rep = trace
        .singularity_report
        .as_ref()
        .ok_or(Error::NoSingularityReport)?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "lambda {lambda} must be positive"
        )));
    }
    if !(t < 0.0) {
        return Err(Error::InvalidParameter(format!(
            "rescaled time {t} must be negative"
        )));
    }
    let target = rep.estimated_t + t / (lambda * lambda);
    let state = state_at(trace, target)?;
    RescaledCloud::from_state(
        &state,
        &load(&rep.x0),
        lambda,
        CloudScale::Lambda { lambda, t },
        &format!("lambda={lambda}"),
    )
}

/// Flow state at time `target`, interpolating between bracketing snapshots.
pub fn state_at(trace: &FlowTrace, target: f64) -> Result<FlowState> {
    let snaps = &trace.snapshots;
    let (first, last) = (snaps[0].t, snaps[snaps.len() - 1].t);
    if !(target >= first && target <= last) {
        return Err(Error::TimeOutsideTrace(target));
    }
    let eps = 1e-12 * target.abs().max(1.0);
    if let Some(s) = snaps.iter().find(|s| (s.t - target).abs() <= eps) {
        return Ok(s.clone());
    }
    let k = snaps.partition_point(|s| s.t <= target);
    let (a, b) = (&snaps[k - 1], &snaps[k]);
    let w = (target - a.t) / (b.t - a.t);
    let positions = a
        .immersion
        .positions()
        .iter()
        .zip(b.immersion.positions())
        .map(|(p, q)| axpy(p, w, &sub(q, p)))
        .collect();
    let im = a.immersion.with_positions(positions)?;
    let geometry = compute_geometry_with(&im, a.geometry.stencil, Some(&a.geometry))?;
    Ok(FlowState {
        t: target,
        immersion: im,
        geometry,
    })
}

/// Snapshots kept by `time_rescale`: those with t <= t_first + KEEP (T - t_first).
/// Close to T the relative error of the estimate dominates the rescaling.
pub const TIME_RESCALE_KEEP: f64 = 0.98;

/// F~ = (F - X0) / sqrt(2(T - t)) at s = -log(T - t) / 2 for each retained
/// snapshot, using the trace's singularity report.
pub fn time_rescale(trace: &FlowTrace) -> Result<Vec<RescaledCloud>> {
    let rep = trace
        .singularity_report
        .as_ref()
        .ok_or(Error::NoSingularityReport)?;
    if !rep.t_reliable {
        return Err(Error::UnreliableEstimate(
            rep.fit_note
                .clone()
                .unwrap_or_else(|| "fit rejected".into()),
        ));
    }
    time_rescale_about(trace, &rep.x0, rep.estimated_t, TIME_RESCALE_KEEP)
}

/// Time-dependent rescaling about an arbitrary spacetime point (X0, T).
pub fn time_rescale_about(
    trace: &FlowTrace,
    x0: &[f64],
    t_sing: f64,
    keep: f64,
) -> Result<Vec<RescaledCloud>> {
    let t_first = trace.snapshots[0].t;
    if !(t_sing > t_first) {
        return Err(Error::TimeNotBeforeReference {
            t: t_first,
            t0: t_sing,
        });
    }
    let cut = t_first + keep * (t_sing - t_first);
    let center = load(x0);
    trace
        .snapshots
        .par_iter()
        .filter(|s| s.t <= cut && s.t < t_sing)
        .map(|s| {
            let gap = t_sing - s.t;
            let factor = 1.0 / (2.0 * gap).sqrt();
            RescaledCloud::from_state(
                s,
                &center,
                factor,
                CloudScale::Log {
                    s: -0.5 * gap.ln(),
                    factor,
                },
                "time_rescale",
            )
        })
        .collect()
}

/// Largest relative defect between the carried rescaled quantities and the
/// geometry recomputed from the rescaled immersion: |A|^2, |H|^2, cos theta.
pub fn scaling_identity_defect(cloud: &RescaledCloud, stencil: Stencil) -> Result<f64> {
    let im = cloud
        .immersion
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("cloud has no immersion".into()))?;
    let geo = compute_geometry_with(im, stencil, None)?;
    let scale_a = cloud
        .norm_a_sq
        .iter()
        .cloned()
        .fold(0.0, f64::max)
        .max(1e-300);
    let scale_h = cloud
        .mean_curvature
        .iter()
        .map(|h| norm(h))
        .fold(0.0, f64::max)
        .max(1e-300);
    let mut worst: f64 = 0.0;
    for (k, v) in geo.vertices.iter().enumerate() {
        worst = worst
            .max((v.norm_a_sq - cloud.norm_a_sq[k]).abs() / scale_a)
            .max(norm(&sub(&v.mean_curvature, &cloud.mean_curvature[k])) / scale_h)
            .max((v.cos_theta - cloud.cos_theta[k]).abs());
    }
    Ok(worst)
}

/// One sampled n-plane through the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneSpec {
    pub basis: [V4; 2],
    /// Lagrangian angle assigned to every sample.
    pub theta: f64,
}

/// Sample planes through the origin on polar grids: `rings` radial cells of
/// width radius / rings and `sectors` angular cells; lines (n = 1) use
/// 2 * rings cells on [-radius, radius]. Ring boundaries carry the exact
/// area of the disc they enclose.
pub fn plane_union_cloud(
    n: usize,
    planes: &[PlaneSpec],
    radius: f64,
    rings: usize,
    sectors: usize,
) -> Result<RescaledCloud> {
    if !matches!(n, 1 | 2) || planes.is_empty() || rings == 0 || (n == 2 && sectors == 0) {
        return Err(Error::InvalidParameter("bad plane cloud request".into()));
    }
    let mut c = RescaledCloud {
        n,
        scale: CloudScale::Synthetic,
        source: CloudSource {
            label: "synthetic".into(),
            t: 0.0,
        },
        periods: None,
        points: Vec::new(),
        weights: Vec::new(),
        tangent_planes: Vec::new(),
        theta: Vec::new(),
        cos_theta: Vec::new(),
        mean_curvature: Vec::new(),
        grad_cos_theta: Vec::new(),
        norm_a_sq: Vec::new(),
        sff: Vec::new(),
        immersion: None,
    };
    let dr = radius / rings as f64;
    for p in planes {
        let e = orthonormalize(&p.basis, n)?;
        let mut push = |x: V4, w: f64| {
            c.points.push(x);
            c.weights.push(w);
            c.tangent_planes.push(e);
            c.theta.push(p.theta);
            c.cos_theta.push(p.theta.cos());
            c.mean_curvature.push(ZERO);
            c.grad_cos_theta.push(ZERO);
            c.norm_a_sq.push(0.0);
            c.sff.push([[[0.0; 2]; 2]; 2]);
        };
        if n == 1 {
            for k in 0..2 * rings {
                let s = -radius + (k as f64 + 0.5) * dr;
                push(scale(&e[0], s), dr);
            }
        } else {
            let dphi = std::f64::consts::TAU / sectors as f64;
            for i in 0..rings {
                let r = (i as f64 + 0.5) * dr;
                for j in 0..sectors {
                    let phi = (j as f64 + 0.5) * dphi;
                    let x = axpy(&scale(&e[0], r * phi.cos()), r * phi.sin(), &e[1]);
                    push(x, r * dr * dphi);
                }
            }
        }
    }
    Ok(c)
}

/// Gram-Schmidt on the first n vectors.
pub fn orthonormalize(b: &[V4; 2], n: usize) -> Result<[V4; 2]> {
    let mut e = [ZERO; 2];
    for k in 0..n {
        let mut v = b[k];
        for j in 0..k {
            v = axpy(&v, -crate::vector::dot(&v, &e[j]), &e[j]);
        }
        let l = norm(&v);
        if !(l > 1e-12) {
            return Err(Error::DegenerateFrame { vertex: k });
        }
        e[k] = scale(&v, 1.0 / l);
    }
    Ok(e)
}

/// The two Lagrangian planes with cos theta = c that are invariant under the
/// complex structure J' built from c (see `complex_structure_witness`).
/// Coordinates are (x1, x2, y1, y2). For c = 1 they coincide, so the two
/// coordinate complex lines are returned instead (angle 0 assigned).
pub fn witness_plane_pair(c: f64) -> Result<[PlaneSpec; 2]> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "cos theta {c} outside (0, 1]"
        )));
    }
    if c == 1.0 {
        return Ok([
            PlaneSpec {
                basis: [[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]],
                theta: 0.0,
            },
            PlaneSpec {
                basis: [[0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]],
                theta: 0.0,
            },
        ]);
    }
    let gamma = (1.0 + c * c) / (5.0 - 2.0 * c * c + c.powi(4)).sqrt();
    let alpha = (1.0 - gamma * gamma).max(0.0).sqrt();
    let plane = |a: f64| {
        // p = (x1, y1, x2, y2) = (1, 0, c a, gamma), q = J' p = (0, c, c gamma, -a)
        let p = [1.0, c * a, 0.0, gamma];
        let q = [0.0, c * gamma, c, -a];
        // det of the complex frame is 2 c gamma - i a (1 + c^2)
        let theta = (-(a * (1.0 + c * c))).atan2(2.0 * c * gamma);
        PlaneSpec {
            basis: [p, q],
            theta,
        }
    };
    Ok([plane(alpha), plane(-alpha)])
}
