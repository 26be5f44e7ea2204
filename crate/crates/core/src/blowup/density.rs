use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cloud::{lambda_rescale, RescaledCloud};
use crate::error::{Error, Result};
use crate::flow::FlowTrace;
use crate::monitors::{area_in_ball, unit_ball_volume};
use crate::vector::{load, norm, norm_sq, sub};

/// rho^{-n} area(cloud in B_rho(xi)) / omega_n for each radius.
pub fn density_ratio(cloud: &RescaledCloud, xi: &[f64], radii: &[f64]) -> Result<Vec<f64>> {
    if radii.iter().any(|r| !(*r > 0.0)) || radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(
            "radii must be positive and increasing".into(),
        ));
    }
    let surf = cloud.surface();
    let n = cloud.n;
    radii
        .iter()
        .map(|&r| {
            let a = area_in_ball(&surf, xi, r);
            if a <= 0.0 {
                Err(Error::EmptyBall)
            } else {
                Ok(a / (r.powi(n as i32) * unit_ball_volume(n)))
            }
        })
        .collect()
}

/// Whether each ratio is at least the previous one minus `tol`.
pub fn is_nondecreasing(values: &[f64], tol: f64) -> bool {
    values.windows(2).all(|w| w[1] >= w[0] - tol)
}

/// Space integrals over B_R(0) of |grad cos theta|^2, |H|^2 and |X^perp|^2.
pub fn ball_integrals(cloud: &RescaledCloud, radius: f64) -> [f64; 3] {
    let surf = cloud.surface();
    let mut imgs = Vec::new();
    let mut acc = [0.0; 3];
    let origin = crate::vector::ZERO;
    for s in &surf.samples {
        surf.images(&s.point, &origin, radius, &mut imgs);
        for x in &imgs {
            acc[0] += s.weight * norm_sq(&s.grad_cos_theta);
            acc[1] += s.weight * norm_sq(&s.mean_curvature);
            acc[2] += s.weight * norm_sq(&s.normal_part(x, surf.n));
        }
    }
    acc
}

/// Trapezoid rule in time of `ball_integrals` over clouds ordered by time.
pub fn window_integrals(clouds: &[(f64, RescaledCloud)], radius: f64) -> [f64; 3] {
    let vals: Vec<[f64; 3]> = clouds
        .par_iter()
        .map(|(_, c)| ball_integrals(c, radius))
        .collect();
    let mut out = [0.0; 3];
    for k in 1..clouds.len() {
        let dt = clouds[k].0 - clouds[k - 1].0;
        for i in 0..3 {
            out[i] += 0.5 * dt * (vals[k][i] + vals[k - 1][i]);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub lambda: f64,
    pub covered: bool,
    pub note: Option<String>,
    /// Rescaled-time integrals of |grad cos theta|^2, |H|^2 and |F^perp|^2
    /// over the ball.
    pub grad_cos_sq: f64,
    pub mean_curvature_sq: f64,
    pub normal_position_sq: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub radius: f64,
    pub window: (f64, f64),
    pub rows: Vec<DecayRow>,
    /// Ratios of each integral between consecutive covered lambdas.
    pub ratios: Vec<[f64; 3]>,
}

/// Rescaled-time samples per lambda: the window [s1, s2] in rescaled time is
/// split into this many intervals.
pub const DECAY_TIME_SAMPLES: usize = 16;

/// For each lambda, integrate over rescaled times [s1, s2] (s1 < s2 < 0) and
/// B_R(0) the three quantities whose decay drives the tangent-flow argument.
pub fn integral_decay_report(
    trace: &FlowTrace,
    lambdas: &[f64],
    radius: f64,
    s1: f64,
    s2: f64,
) -> Result<DecayReport> {
    if trace.singularity_report.is_none() {
        return Err(Error::NoSingularityReport);
    }
    if !(s1 < s2 && s2 < 0.0 && radius > 0.0) {
        return Err(Error::InvalidParameter(
            "need s1 < s2 < 0 and a positive radius".into(),
        ));
    }
    let rows: Vec<DecayRow> = lambdas
        .par_iter()
        .map(|&lambda| {
            let times: Vec<f64> = (0..=DECAY_TIME_SAMPLES)
                .map(|k| s1 + (s2 - s1) * k as f64 / DECAY_TIME_SAMPLES as f64)
                .collect();
            let clouds: Result<Vec<(f64, RescaledCloud)>> = times
                .iter()
                .map(|&t| Ok((t, lambda_rescale(trace, lambda, t)?)))
                .collect();
            match clouds {
                Ok(c) => {
                    let v = window_integrals(&c, radius);
                    DecayRow {
                        lambda,
                        covered: true,
                        note: None,
                        grad_cos_sq: v[0],
                        mean_curvature_sq: v[1],
                        normal_position_sq: v[2],
                        samples: c.len(),
                    }
                }
                Err(e) => DecayRow {
                    lambda,
                    covered: false,
                    note: Some(e.to_string()),
                    grad_cos_sq: f64::NAN,
                    mean_curvature_sq: f64::NAN,
                    normal_position_sq: f64::NAN,
                    samples: 0,
                },
            }
        })
        .collect();
    let covered: Vec<&DecayRow> = rows.iter().filter(|r| r.covered).collect();
    let ratios = covered
        .windows(2)
        .map(|w| {
            [
                w[1].grad_cos_sq / w[0].grad_cos_sq,
                w[1].mean_curvature_sq / w[0].mean_curvature_sq,
                w[1].normal_position_sq / w[0].normal_position_sq,
            ]
        })
        .collect();
    Ok(DecayReport {
        radius,
        window: (s1, s2),
        rows,
        ratios,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsoperimetricRow {
    pub radius: f64,
    /// Area of the intrinsic ball.
    pub area: f64,
    /// area / radius^2
    pub ratio: f64,
}

#[derive(PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, ties by index for determinism
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

/// Areas of intrinsic balls about a vertex against radius^2. Distances are
/// shortest paths along grid edges and diagonals, so they overestimate the
/// geodesic distance by a few percent; the ratios are reported, not gated.
pub fn isoperimetric_profile(
    cloud: &RescaledCloud,
    center: usize,
    radii: &[f64],
) -> Result<Vec<IsoperimetricRow>> {
    let im = cloud
        .immersion
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("cloud has no immersion".into()))?;
    if center >= im.len() {
        return Err(Error::InvalidParameter(format!(
            "vertex {center} out of range"
        )));
    }
    let g = im.grid();
    let shifts = [im.seam_shift(0), im.seam_shift(1)];
    let offsets: Vec<(isize, isize)> = if g.n == 1 {
        vec![(1, 0), (-1, 0)]
    } else {
        (-1..=1)
            .flat_map(|a| (-1..=1).map(move |b| (a, b)))
            .filter(|o| *o != (0, 0))
            .collect()
    };
    let rmax = radii.iter().cloned().fold(0.0, f64::max);
    let mut dist = vec![f64::INFINITY; im.len()];
    let mut heap = BinaryHeap::new();
    dist[center] = 0.0;
    heap.push(Item(0.0, center));
    while let Some(Item(d, v)) = heap.pop() {
        if d > dist[v] || d > rmax {
            continue;
        }
        let (i, j) = g.coords(v);
        let p = im.positions()[v];
        for &(di, dj) in &offsets {
            let (u, wraps) = g.neighbor(i, j, di, dj);
            let q = im.lifted(u, wraps, &shifts);
            let nd = d + norm(&sub(&q, &p));
            if nd < dist[u] {
                dist[u] = nd;
                heap.push(Item(nd, u));
            }
        }
    }
    Ok(radii
        .iter()
        .map(|&r| {
            let area: f64 = dist
                .iter()
                .zip(&cloud.weights)
                .filter(|(d, _)| **d <= r)
                .map(|(_, w)| w)
                .sum();
            IsoperimetricRow {
                radius: r,
                area,
                ratio: area / (r * r),
            }
        })
        .collect())
}

/// Distance from the origin of the nearest sample, a quick check that a
/// blow-up center lies on the cloud.
pub fn nearest_sample_distance(cloud: &RescaledCloud, xi: &[f64]) -> f64 {
    let x = load(xi);
    cloud
        .points
        .iter()
        .map(|p| norm_sq(&sub(p, &x)))
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}
