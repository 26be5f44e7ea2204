use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{FlowState, FlowTrace, SingularityReport, StepRecord};
use crate::error::{Error, Result};
use crate::vector::{axpy, norm_sq, scale, V4, ZERO};

#[derive(Clone, Debug, PartialEq)]
pub struct SingularTimeFit {
    pub t: f64,
    pub reliable: bool,
    pub note: Option<String>,
    pub residual: f64,
}

/// Least-squares fit of 1/max|A|^2 = a + b t over the trailing `fraction` of
/// the records; T = -a/b is where the line reaches zero.
pub fn fit_singular_time(records: &[StepRecord], fraction: f64) -> SingularTimeFit {
    let len = records.len();
    let k = ((len as f64 * fraction).ceil() as usize).max(3).min(len);
    let unreliable = |note: &str, t: f64, residual: f64| SingularTimeFit {
        t,
        reliable: false,
        note: Some(note.to_string()),
        residual,
    };
    if k < 3 {
        return unreliable("fewer than 3 steps to fit", f64::NAN, f64::NAN);
    }
    let w = &records[len - k..];
    let pts: Vec<(f64, f64)> = w.iter().map(|r| (r.t, 1.0 / r.max_a_sq)).collect();
    let m = k as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let b = sty / stt;
    let a = my - b * mt;
    let t = -a / b;
    let rms = (pts.iter().map(|p| (p.1 - a - b * p.0).powi(2)).sum::<f64>() / m).sqrt();
    let residual = rms / my.abs();
    if !(b < 0.0) || !t.is_finite() {
        return unreliable("1/max|A|^2 is not decreasing", t, residual);
    }
    if pts.windows(2).any(|p| p[1].1 > p[0].1) {
        return unreliable(
            "1/max|A|^2 is not monotone over the fit window",
            t,
            residual,
        );
    }
    if t <= w[k - 1].t {
        return unreliable("fitted T precedes the last step", t, residual);
    }
    SingularTimeFit {
        t,
        reliable: true,
        note: None,
        residual,
    }
}

/// Area-weighted centroid of the vertices where |A|^2 is within a relative
/// 1e-6 of its maximum. Symmetric shrinkers attain the maximum everywhere,
/// and the centroid then sits at their center.
pub fn estimate_x0(state: &FlowState) -> V4 {
    let geo = &state.geometry;
    let max = geo.max_norm_a_sq();
    let cut = max * (1.0 - 1e-6);
    let mut c = ZERO;
    let mut wsum = 0.0;
    for (p, v) in state.immersion.positions().iter().zip(&geo.vertices) {
        if v.norm_a_sq >= cut {
            c = axpy(&c, v.area_element, p);
            wsum += v.area_element;
        }
    }
    scale(&c, 1.0 / wsum)
}

pub(super) fn singularity_report(trace: &FlowTrace) -> SingularityReport {
    let fit = fit_singular_time(&trace.step_log, trace.controls.fit_fraction);
    let d = 2 * trace.n();
    let x0 = estimate_x0(trace.final_state())[..d].to_vec();
    let type_indicator = if fit.t.is_finite() {
        trace
            .records()
            .filter(|r| r.t < fit.t)
            .map(|r| (r.t, (fit.t - r.t) * r.max_a_sq))
            .collect()
    } else {
        Vec::new()
    };
    SingularityReport {
        estimated_t: fit.t,
        t_reliable: fit.reliable,
        fit_note: fit.note,
        fit_residual: fit.residual,
        x0,
        type_indicator,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TypeClass {
    #[serde(rename = "type_i")]
    TypeI,
    #[serde(rename = "type_ii")]
    TypeII,
    #[serde(rename = "indeterminate")]
    Indeterminate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeReport {
    pub classification: TypeClass,
    /// Median of the indicator over the window.
    pub plateau: f64,
    /// (max - min) / median over the window.
    pub oscillation: f64,
    /// Largest indicator value over the window.
    pub sup: f64,
    /// Time span of the window.
    pub window: (f64, f64),
    pub indicator: Vec<(f64, f64)>,
}

/// Relative oscillation below which the indicator counts as a plateau.
pub const PLATEAU_OSCILLATION: f64 = 0.2;

/// Type I when (T - t) max|A|^2 stays on a plateau over the trailing window
/// (entries 50% to 90% of the history), Type II otherwise.
pub fn classify_type(trace: &FlowTrace) -> Result<TypeReport> {
    let rep = trace
        .singularity_report
        .as_ref()
        .ok_or(Error::NoSingularityReport)?;
    let ind = &rep.type_indicator;
    let len = ind.len();
    let (lo, hi) = (len / 2, (len * 9) / 10);
    if !rep.t_reliable || hi <= lo {
        return Ok(TypeReport {
            classification: TypeClass::Indeterminate,
            plateau: f64::NAN,
            oscillation: f64::NAN,
            sup: f64::NAN,
            window: (f64::NAN, f64::NAN),
            indicator: ind.clone(),
        });
    }
    let stats = plateau_stats(&ind[lo..hi]);
    let classification = if stats.oscillation < PLATEAU_OSCILLATION {
        TypeClass::TypeI
    } else {
        TypeClass::TypeII
    };
    Ok(TypeReport {
        classification,
        plateau: stats.median,
        oscillation: stats.oscillation,
        sup: stats.max,
        window: (ind[lo].0, ind[hi - 1].0),
        indicator: ind.clone(),
    })
}

pub struct PlateauStats {
    pub min: f64,
    pub max: f64,
    pub median: f64,
    pub oscillation: f64,
}

pub fn plateau_stats(window: &[(f64, f64)]) -> PlateauStats {
    let mut v: Vec<f64> = window.iter().map(|p| p.1).collect();
    v.sort_by(f64::total_cmp);
    let median = v[v.len() / 2];
    let (min, max) = (v[0], v[v.len() - 1]);
    PlateauStats {
        min,
        max,
        median,
        oscillation: (max - min) / median,
    }
}

fn check_pair(a: &FlowState, b: &FlowState) -> Result<f64> {
    if a.geometry.grid != b.geometry.grid {
        return Err(Error::GridMismatch);
    }
    let dt = b.t - a.t;
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(
            "snapshots must be strictly increasing in time".into(),
        ));
    }
    Ok(dt)
}

fn weighted_norm(w: &[f64], f: impl Iterator<Item = f64>) -> f64 {
    w.iter().zip(f).map(|(w, x)| w * x * x).sum::<f64>().sqrt()
}

/// Largest normalized residual of d(theta)/dt = Laplace(theta) between
/// consecutive snapshots, with the right-hand side averaged over both ends.
/// The normalization is max(|Laplace theta|, ||H|^2|) in L^2, so static
/// shrinkers (Laplace theta = 0) are measured on the curvature scale.
pub fn theta_heat_residual_on(snapshots: &[FlowState]) -> Result<f64> {
    residual_over(snapshots, |a, b, dt| {
        let mut jump: f64 = 0.0;
        let dtheta: Vec<f64> = a
            .geometry
            .vertices
            .iter()
            .zip(&b.geometry.vertices)
            .map(|(p, q)| {
                let d = q.theta - p.theta;
                jump = jump.max(d.abs());
                d / dt
            })
            .collect();
        if jump > PI {
            return Err(Error::BranchMismatch(jump));
        }
        let la = a.geometry.laplacian_theta();
        let lb = b.geometry.laplacian_theta();
        let rhs: Vec<f64> = la.iter().zip(&lb).map(|(x, y)| 0.5 * (x + y)).collect();
        Ok((dtheta, rhs.clone(), rhs))
    })
}

pub fn theta_heat_residual(trace: &FlowTrace) -> Result<f64> {
    theta_heat_residual_on(&trace.snapshots)
}

/// As [`theta_heat_residual_on`] for d(cos theta)/dt = Laplace(cos theta) +
/// |H|^2 cos theta.
pub fn cos_theta_reaction_residual_on(snapshots: &[FlowState]) -> Result<f64> {
    residual_over(snapshots, |a, b, dt| {
        let va: Vec<f64> = a.geometry.vertices.iter().map(|v| v.cos_theta).collect();
        let vb: Vec<f64> = b.geometry.vertices.iter().map(|v| v.cos_theta).collect();
        let la = a.geometry.laplacian(&va);
        let lb = b.geometry.laplacian(&vb);
        let ra = a
            .geometry
            .vertices
            .iter()
            .map(|v| norm_sq(&v.mean_curvature) * v.cos_theta);
        let rb: Vec<f64> = b
            .geometry
            .vertices
            .iter()
            .map(|v| norm_sq(&v.mean_curvature) * v.cos_theta)
            .collect();
        let react: Vec<f64> = ra.zip(&rb).map(|(x, y)| 0.5 * (x + y)).collect();
        let lap: Vec<f64> = la.iter().zip(&lb).map(|(x, y)| 0.5 * (x + y)).collect();
        let dv: Vec<f64> = va.iter().zip(&vb).map(|(x, y)| (y - x) / dt).collect();
        let rhs: Vec<f64> = lap.iter().zip(&react).map(|(x, y)| x + y).collect();
        Ok((
            dv,
            rhs,
            lap.into_iter()
                .zip(react)
                .map(|(l, r)| l.abs().max(r.abs()))
                .collect(),
        ))
    })
}

pub fn cos_theta_reaction_residual(trace: &FlowTrace) -> Result<f64> {
    cos_theta_reaction_residual_on(&trace.snapshots)
}

/// `pair` returns (lhs, rhs, scale) per vertex; the residual of a pair is
/// ||lhs - rhs|| / max(||scale||, |||H|^2||).
fn residual_over<F>(snapshots: &[FlowState], pair: F) -> Result<f64>
where
    F: Fn(&FlowState, &FlowState, f64) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)>,
{
    if snapshots.len() < 2 {
        return Err(Error::NotEnoughSnapshots {
            needed: 2,
            have: snapshots.len(),
        });
    }
    let mut worst: f64 = 0.0;
    for w in snapshots.windows(2) {
        let dt = check_pair(&w[0], &w[1])?;
        let (lhs, rhs, sc) = pair(&w[0], &w[1], dt)?;
        let wa = w[0].geometry.weights();
        let wb = w[1].geometry.weights();
        let wt: Vec<f64> = wa.iter().zip(&wb).map(|(x, y)| 0.5 * (x + y)).collect();
        let num = weighted_norm(&wt, lhs.iter().zip(&rhs).map(|(l, r)| l - r));
        let h2 = weighted_norm(
            &wt,
            w[0].geometry
                .vertices
                .iter()
                .zip(&w[1].geometry.vertices)
                .map(|(p, q)| 0.5 * (norm_sq(&p.mean_curvature) + norm_sq(&q.mean_curvature))),
        );
        let den = weighted_norm(&wt, sc.into_iter()).max(h2);
        let r = if den > 0.0 { num / den } else { num };
        worst = worst.max(r);
    }
    Ok(worst)
}
