use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cloud::{CloudScale, RescaledCloud};
use crate::error::{Error, Result};
use crate::mesh::{compute_geometry_with, GeometryCache, Stencil};
use crate::monitors::{kernel_integrals, KernelSpec};
use crate::vector::{add, norm_sq, scale, sub, V4, ZERO};

fn s_of(c: &RescaledCloud) -> Result<f64> {
    match c.scale {
        CloudScale::Log { s, .. } => Ok(s),
        _ => Err(Error::InvalidParameter(
            "cloud does not come from the time-dependent rescaling".into(),
        )),
    }
}

fn check_pairs(seq: &[RescaledCloud]) -> Result<()> {
    if seq.len() < 2 {
        return Err(Error::NotEnoughSnapshots {
            needed: 2,
            have: seq.len(),
        });
    }
    for w in seq.windows(2) {
        let shape = |c: &RescaledCloud| c.immersion.as_ref().map(|im| im.grid_shape());
        if w[0].len() != w[1].len() || shape(&w[0]) != shape(&w[1]) {
            return Err(Error::GridMismatch);
        }
    }
    Ok(())
}

fn weighted_norm(w: &[f64], f: impl Fn(usize) -> f64) -> f64 {
    w.iter()
        .enumerate()
        .map(|(k, w)| w * f(k))
        .sum::<f64>()
        .sqrt()
}

/// Residual of dF~/ds = H~ + F~ over consecutive clouds: weighted L^2 of
/// (F~1 - F~0)/ds - (H~ + F~)avg relative to the larger of |F~| and |H~|;
/// the max over pairs.
pub fn rescaled_flow_residual(seq: &[RescaledCloud]) -> Result<f64> {
    check_pairs(seq)?;
    let mut worst: f64 = 0.0;
    for w in seq.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let ds = s_of(b)? - s_of(a)?;
        if !(ds > 0.0) {
            return Err(Error::InvalidParameter("s values must increase".into()));
        }
        let wt: Vec<f64> = a
            .weights
            .iter()
            .zip(&b.weights)
            .map(|(x, y)| 0.5 * (x + y))
            .collect();
        let avg = |f: &dyn Fn(&RescaledCloud, usize) -> V4, k: usize| {
            scale(&add(&f(a, k), &f(b, k)), 0.5)
        };
        let pos = |c: &RescaledCloud, k: usize| c.points[k];
        let hc = |c: &RescaledCloud, k: usize| c.mean_curvature[k];
        let d = weighted_norm(&wt, |k| {
            let rate = scale(&sub(&b.points[k], &a.points[k]), 1.0 / ds);
            norm_sq(&sub(&rate, &add(&avg(&hc, k), &avg(&pos, k))))
        });
        let size = weighted_norm(&wt, |k| norm_sq(&avg(&pos, k)))
            .max(weighted_norm(&wt, |k| norm_sq(&avg(&hc, k))));
        worst = worst.max(d / size);
    }
    Ok(worst)
}

/// Beyond this distance exp(-|X|^2/2) is below 1e-17.
const GAUSS_RADIUS: f64 = 9.0;

/// (integral of |H~ + F~^perp|^2 exp(-|X|^2/2))^{1/2}, over all lattice
/// images for periodic clouds.
pub fn self_shrinker_residual(cloud: &RescaledCloud) -> f64 {
    let surf = cloud.surface();
    let mut imgs = Vec::new();
    let mut acc = 0.0;
    for s in &surf.samples {
        surf.images(&s.point, &ZERO, GAUSS_RADIUS, &mut imgs);
        for x in &imgs {
            let v = add(&s.mean_curvature, &s.normal_part(x, surf.n));
            acc += s.weight * (-0.5 * norm_sq(x)).exp() * norm_sq(&v);
        }
    }
    acc.sqrt()
}

fn fresh_geometry(seq: &[RescaledCloud], stencil: Stencil) -> Result<Vec<GeometryCache>> {
    seq.par_iter()
        .map(|c| {
            let im = c
                .immersion
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("cloud has no immersion".into()))?;
            compute_geometry_with(im, stencil, None)
        })
        .collect()
}

/// Residual of (d/ds - Laplacian) v~ = |H~|^2 v~ for v~ = cos theta over
/// consecutive clouds, with geometry recomputed on the rescaled immersions
/// by `stencil`. Normalized by the larger of the Laplacian and reaction
/// terms (floored at 1e-12 |v~|); the max over pairs.
pub fn rescaled_theta_identity(seq: &[RescaledCloud], stencil: Stencil) -> Result<f64> {
    check_pairs(seq)?;
    let geos = fresh_geometry(seq, stencil)?;
    let terms: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = geos
        .par_iter()
        .map(|g| {
            let v: Vec<f64> = g.vertices.iter().map(|x| x.cos_theta).collect();
            let lap = g.laplacian(&v);
            let react = g
                .vertices
                .iter()
                .map(|x| norm_sq(&x.mean_curvature) * x.cos_theta)
                .collect();
            (v, lap, react)
        })
        .collect();
    let mut worst: f64 = 0.0;
    for k in 0..seq.len() - 1 {
        let ds = s_of(&seq[k + 1])? - s_of(&seq[k])?;
        let (a, b) = (&terms[k], &terms[k + 1]);
        let wt: Vec<f64> = geos[k]
            .weights()
            .iter()
            .zip(geos[k + 1].weights())
            .map(|(x, y)| 0.5 * (x + y))
            .collect();
        let d = weighted_norm(&wt, |i| {
            let rate = (b.0[i] - a.0[i]) / ds;
            (rate - 0.5 * (a.1[i] + b.1[i]) - 0.5 * (a.2[i] + b.2[i])).powi(2)
        });
        // floor: on minimal surfaces both terms are roundoff
        let floor = 1e-12 * weighted_norm(&wt, |i| a.0[i] * a.0[i]);
        let size = weighted_norm(&wt, |i| (0.5 * (a.1[i] + b.1[i])).powi(2))
            .max(weighted_norm(&wt, |i| (0.5 * (a.2[i] + b.2[i])).powi(2)))
            .max(floor);
        worst = worst.max(if size > 0.0 { d / size } else { d });
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescaledPsiRow {
    pub s: f64,
    /// integral of (1/v~) phi exp(-|X|^2/2)
    pub psi: Option<f64>,
    /// integral of (phi rho~ / v~) |grad v~|^2 / v~^2
    pub gradient_term: Option<f64>,
    /// integral of (phi rho~ / v~) |H~ + F~^perp|^2
    pub shrinker_term: Option<f64>,
    /// integral of (phi rho~ / v~) |H~|^2
    pub mean_curvature_term: Option<f64>,
    pub refusal: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescaledPsiReport {
    pub rows: Vec<RescaledPsiRow>,
    /// Psi(s1) - Psi(s0) - tol per consecutive pair with defined values.
    pub excess: Vec<f64>,
    pub all_nonincreasing: bool,
}

/// Psi~(s) with rho~ = exp(-|X|^2/2) centered at the origin and optional
/// cutoff radius; Psi~ must not grow by more than c_ref (h^2 + ds) ds per
/// pair, h being the parametric grid spacing.
pub fn rescaled_psi_monotonicity(
    seq: &[RescaledCloud],
    cutoff_radius: Option<f64>,
    c_ref: f64,
) -> Result<RescaledPsiReport> {
    if seq.is_empty() {
        return Err(Error::NotEnoughSnapshots { needed: 1, have: 0 });
    }
    let n = seq[0].n;
    let spec = KernelSpec::new(&[0.0; 4][..2 * n], 0.5, cutoff_radius)?;
    let mass = (2.0 * std::f64::consts::PI).powf(n as f64 / 2.0);
    let rows: Vec<RescaledPsiRow> = seq
        .par_iter()
        .map(|c| {
            let s = s_of(c)?;
            Ok(match kernel_integrals(&c.surface(), &spec, 0.5, true) {
                Ok(k) => RescaledPsiRow {
                    s,
                    psi: Some(mass * k.psi),
                    gradient_term: Some(mass * k.gradient_term),
                    shrinker_term: Some(mass * k.shrinker_term),
                    mean_curvature_term: Some(mass * k.mean_curvature_term),
                    refusal: None,
                },
                Err(e @ Error::WeightUndefined { .. }) => RescaledPsiRow {
                    s,
                    psi: None,
                    gradient_term: None,
                    shrinker_term: None,
                    mean_curvature_term: None,
                    refusal: Some(e.to_string()),
                },
                Err(e) => return Err(e),
            })
        })
        .collect::<Result<_>>()?;
    let h = seq[0]
        .immersion
        .as_ref()
        .map(|im| im.grid().spacing[..n].iter().cloned().fold(0.0, f64::max))
        .unwrap_or(0.0);
    let excess: Vec<f64> = rows
        .windows(2)
        .filter_map(|w| {
            let (a, b) = (w[0].psi?, w[1].psi?);
            let ds = w[1].s - w[0].s;
            Some(b - a - c_ref * (h * h + ds) * ds)
        })
        .collect();
    Ok(RescaledPsiReport {
        all_nonincreasing: excess.iter().all(|e| *e <= 0.0),
        rows,
        excess,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blowup::{fixtures, plane_union_cloud, time_rescale, time_rescale_about, PlaneSpec};
    use crate::flow::{run, FlowControls, Until};
    use crate::mesh::build_scenario;
    use std::f64::consts::PI;

    #[test]
    fn shrinkers_satisfy_rescaled_identities() {
        for tr in [fixtures::circle(), fixtures::clifford()] {
            let seq = time_rescale(tr).unwrap();
            for c in &seq {
                let r = self_shrinker_residual(c);
                assert!(r < 1e-3, "{r}");
            }
            let f = rescaled_flow_residual(&seq).unwrap();
            assert!(f < 1e-3, "{f}");
            let th = rescaled_theta_identity(&seq, Stencil::Central2).unwrap();
            assert!(th < 1e-2, "{th}");
        }
    }

    // Oracle: the plane {y = d} in C at distance d from the origin has
    // X^perp = d e_y, so the weighted norm is d (integral of exp(-(x^2+d^2)/2))^{1/2}.
    #[test]
    fn translated_plane_residual() {
        let d = 0.7;
        let mut c = plane_union_cloud(
            1,
            &[PlaneSpec {
                basis: [[1.0, 0.0, 0.0, 0.0], [0.0; 4]],
                theta: 0.0,
            }],
            12.0,
            6000,
            1,
        )
        .unwrap();
        for p in &mut c.points {
            p[1] = d;
        }
        let mass = (2.0 * PI).sqrt() * (-0.5 * d * d).exp();
        let want = d * mass.sqrt();
        assert!((self_shrinker_residual(&c) - want).abs() < 1e-8);
    }

    #[test]
    fn flat_torus_theta_identity_vanishes() {
        let flat = build_scenario("lagrangian_graph", &[0.0, 0.0], 16).unwrap();
        let c = FlowControls {
            snapshot_stride: 2,
            ..FlowControls::default()
        };
        let tr = run(flat, Until::Time(0.02), &c).unwrap();
        let seq = time_rescale_about(&tr, &[0.0; 4], 1.0, 1.0).unwrap();
        let r = rescaled_theta_identity(&seq, Stencil::Central2).unwrap();
        assert!(r < 1e-12, "{r}");
        let rep = rescaled_psi_monotonicity(&seq, None, 0.0).unwrap();
        let psi: Vec<f64> = rep.rows.iter().map(|r| r.psi.unwrap()).collect();
        for p in &psi {
            assert!((p - 2.0 * PI).abs() < 1e-6, "{p}");
        }
    }

    #[test]
    fn tilted_plane_rescaled_psi() {
        let a: f64 = 0.5;
        let mk = |s: f64| {
            let mut c = plane_union_cloud(
                1,
                &[PlaneSpec {
                    basis: [[a.cos(), a.sin(), 0.0, 0.0], [0.0; 4]],
                    theta: a,
                }],
                12.0,
                6000,
                1,
            )
            .unwrap();
            c.scale = CloudScale::Log { s, factor: 1.0 };
            c
        };
        let seq = vec![mk(0.0), mk(0.5), mk(1.0)];
        let rep = rescaled_psi_monotonicity(&seq, None, 0.0).unwrap();
        let want = (2.0 * PI).sqrt() / a.cos();
        for r in &rep.rows {
            assert!((r.psi.unwrap() - want).abs() < 1e-6);
            assert!(r.shrinker_term.unwrap().abs() < 1e-20);
        }
        assert!(rep.excess.iter().all(|e| e.abs() < 1e-12));
    }

    #[test]
    fn graph_rescaled_psi_is_monotone() {
        let g = build_scenario("lagrangian_graph", &[0.1, 0.1], 16).unwrap();
        let c = FlowControls {
            snapshot_stride: 4,
            ..FlowControls::default()
        };
        let tr = run(g, Until::Time(0.3), &c).unwrap();
        let seq = time_rescale_about(&tr, &[0.5, 0.2, 0.0, 0.0], 0.5, 1.0).unwrap();
        let rep = rescaled_psi_monotonicity(&seq, None, 1.0).unwrap();
        assert!(rep.rows.iter().all(|r| r.refusal.is_none()));
        assert!(rep.all_nonincreasing, "{:?}", rep.excess);
        // circle clouds refuse: cos theta changes sign
        let seq = time_rescale(fixtures::circle()).unwrap();
        let rep = rescaled_psi_monotonicity(&seq[..3], None, 1.0).unwrap();
        assert!(rep.rows.iter().all(|r| r.refusal.is_some()));
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let a = time_rescale(fixtures::circle()).unwrap();
        let b = time_rescale(fixtures::clifford()).unwrap();
        let mixed = vec![a[0].clone(), b[1].clone()];
        assert_eq!(rescaled_flow_residual(&mixed), Err(Error::GridMismatch));
    }
}
