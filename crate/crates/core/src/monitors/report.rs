use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernel::{kernel_integrals, KernelIntegrals, KernelSpec, WeightedSurface};
use crate::error::{Error, Result};
use crate::flow::{FlowState, FlowTrace};
use crate::vector::{dot, norm_sq, scale, sub};

/// Psi and the dissipation integrals at one snapshot, or the reason the
/// weight was undefined there.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsiSample {
    pub t: f64,
    pub integrals: Option<KernelIntegrals>,
    pub refusal: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsiPair {
    pub t0: f64,
    pub t1: f64,
    /// (Psi(t1) - Psi(t0)) / (t1 - t0)
    pub rate: f64,
    /// Trapezoid average of D over the pair.
    pub dissipation: f64,
    /// Trapezoid average of D with the full |H|^2 term; the rate equals
    /// minus this in the continuum.
    pub dissipation_full: f64,
    /// rate + dissipation_full
    pub defect: f64,
    pub tol: f64,
    /// -D + tol - rate; nonnegative when the inequality holds.
    pub margin: f64,
    pub holds: bool,
    /// Psi did not increase by more than tol * dt.
    pub nonincreasing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsiReport {
    pub spec: KernelSpec,
    pub c_ref: f64,
    pub samples: Vec<PsiSample>,
    pub pairs: Vec<PsiPair>,
    /// Fraction of pairs where rate <= -D + tol.
    pub hold_fraction: f64,
    pub all_nonincreasing: bool,
    pub refusals: usize,
}

/// Parametric spacing used in the discretization tolerance.
fn spacing(state: &FlowState) -> f64 {
    let g = state.immersion.grid();
    let n = g.n;
    g.spacing[..n].iter().cloned().fold(0.0, f64::max)
}

fn psi_samples(snapshots: &[FlowState], spec: &KernelSpec) -> Result<Vec<PsiSample>> {
    spec.validate()?;
    snapshots
        .par_iter()
        .map(|s| {
            let tau = spec.tau(s.t)?;
            let surf = WeightedSurface::from_state(s);
            Ok(match kernel_integrals(&surf, spec, tau, true) {
                Ok(k) => PsiSample {
                    t: s.t,
                    integrals: Some(k),
                    refusal: None,
                },
                Err(e @ Error::WeightUndefined { .. }) => PsiSample {
                    t: s.t,
                    integrals: None,
                    refusal: Some(e.to_string()),
                },
                Err(e) => return Err(e),
            })
        })
        .collect()
}

/// (rate, D, D_full) for consecutive samples with defined weights.
fn raw_pairs(samples: &[PsiSample]) -> Vec<(f64, f64, f64, f64, f64)> {
    samples
        .windows(2)
        .filter_map(|w| {
            let (a, b) = (w[0].integrals?, w[1].integrals?);
            let dt = w[1].t - w[0].t;
            (dt > 0.0).then(|| {
                (
                    w[0].t,
                    w[1].t,
                    (b.psi - a.psi) / dt,
                    0.5 * (a.dissipation + b.dissipation),
                    0.5 * (a.dissipation_full + b.dissipation_full),
                )
            })
        })
        .collect()
}

/// Discretization constant C with |rate + D_full| <= C (h^2 + dt) on the
/// given traces, doubled for slack. Pass the same scenario at two
/// resolutions.
pub fn calibrate_psi_tolerance(traces: &[&FlowTrace], spec: &KernelSpec) -> Result<f64> {
    let mut c: f64 = 0.0;
    let mut pairs = 0;
    for tr in traces {
        let h = spacing(&tr.snapshots[0]);
        let samples = psi_samples(&tr.snapshots, spec)?;
        for (t0, t1, rate, _, d_full) in raw_pairs(&samples) {
            c = c.max((rate + d_full).abs() / (h * h + (t1 - t0)));
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(Error::NotEnoughSnapshots { needed: 2, have: 0 });
    }
    Ok(2.0 * c)
}

/// Check d Psi/dt <= -D + C_ref (h^2 + dt) over consecutive snapshots.
/// Snapshots where the weight is undefined are recorded as refusals.
pub fn psi_monotonicity_report(
    trace: &FlowTrace,
    spec: &KernelSpec,
    c_ref: f64,
) -> Result<PsiReport> {
    if trace.snapshots.len() < 2 {
        return Err(Error::NotEnoughSnapshots {
            needed: 2,
            have: trace.snapshots.len(),
        });
    }
    let h = spacing(&trace.snapshots[0]);
    let samples = psi_samples(&trace.snapshots, spec)?;
    let pairs: Vec<PsiPair> = raw_pairs(&samples)
        .into_iter()
        .map(|(t0, t1, rate, d, d_full)| {
            let tol = c_ref * (h * h + (t1 - t0));
            let margin = -d + tol - rate;
            PsiPair {
                t0,
                t1,
                rate,
                dissipation: d,
                dissipation_full: d_full,
                defect: rate + d_full,
                tol,
                margin,
                holds: margin >= 0.0,
                nonincreasing: rate <= tol,
            }
        })
        .collect();
    let holds = pairs.iter().filter(|p| p.holds).count();
    Ok(PsiReport {
        spec: spec.clone(),
        c_ref,
        hold_fraction: if pairs.is_empty() {
            0.0
        } else {
            holds as f64 / pairs.len() as f64
        },
        all_nonincreasing: pairs.iter().all(|p| p.nonincreasing),
        refusals: samples.iter().filter(|s| s.refusal.is_some()).count(),
        samples,
        pairs,
    })
}

/// Volume of the unit ball in R^n.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => std::f64::consts::PI,
        _ => std::f64::consts::PI.powf(n as f64 / 2.0) / gamma_half_integer(n + 2),
    }
}

/// Gamma(k / 2) for a positive integer k.
fn gamma_half_integer(k: usize) -> f64 {
    let mut g = if k % 2 == 0 {
        1.0
    } else {
        std::f64::consts::PI.sqrt()
    };
    let mut x = if k % 2 == 0 { 1.0 } else { 0.5 };
    while x < k as f64 / 2.0 - 1e-12 {
        g *= x;
        x += 1.0;
    }
    g
}

/// Area of the surface inside B_R(center), counting lattice images.
pub fn area_in_ball(surf: &WeightedSurface, center: &[f64], radius: f64) -> f64 {
    let c = crate::vector::load(center);
    let mut imgs = Vec::new();
    let mut area = 0.0;
    for s in &surf.samples {
        surf.images(&s.point, &c, radius, &mut imgs);
        area += s.weight * imgs.len() as f64;
    }
    area
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityBoundRow {
    pub lambda: f64,
    /// sup over snapshots of R^{-n} area(Sigma_t^lambda in B_R(0))
    pub sup_ratio: f64,
    /// sup_ratio / omega_n
    pub normalized: f64,
    pub t_at_sup: f64,
    pub snapshots_used: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityBoundReport {
    pub radius: f64,
    pub rows: Vec<DensityBoundRow>,
    /// max over lambda of sup_ratio divided by the min.
    pub spread: f64,
    pub bounded: bool,
}

pub const DENSITY_SPREAD_BOUND: f64 = 10.0;

/// Rescale each snapshot before the estimated singular time by
/// X -> lambda (X - X0) and take the sup over snapshots of the volume ratio
/// in B_R(0).
pub fn volume_density_bound(
    trace: &FlowTrace,
    radius: f64,
    lambdas: &[f64],
) -> Result<DensityBoundReport> {
    let rep = trace
        .singularity_report
        .as_ref()
        .ok_or(Error::NoSingularityReport)?;
    if !(radius > 0.0) || lambdas.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::InvalidParameter(
            "radius and scales must be positive".into(),
        ));
    }
    let n = trace.n();
    let x0 = crate::vector::load(&rep.x0);
    let rows: Vec<DensityBoundRow> = lambdas
        .par_iter()
        .map(|&lambda| {
            let mut best = (0.0, f64::NAN);
            let mut used = 0;
            for s in trace.snapshots.iter().filter(|s| s.t < rep.estimated_t) {
                let mut surf = WeightedSurface::from_state(s);
                for p in &mut surf.samples {
                    p.point = scale(&sub(&p.point, &x0), lambda);
                    p.weight *= lambda.powi(n as i32);
                }
                surf.periods = surf.periods.map(|p| p.iter().map(|x| x * lambda).collect());
                let ratio = area_in_ball(&surf, &[0.0; 4][..2 * n], radius) / radius.powi(n as i32);
                used += 1;
                if ratio > best.0 {
                    best = (ratio, s.t);
                }
            }
            if used == 0 {
                return Err(Error::NotEnoughSnapshots { needed: 1, have: 0 });
            }
            Ok(DensityBoundRow {
                lambda,
                sup_ratio: best.0,
                normalized: best.0 / unit_ball_volume(n),
                t_at_sup: best.1,
                snapshots_used: used,
            })
        })
        .collect::<Result<_>>()?;
    let max = rows.iter().map(|r| r.sup_ratio).fold(0.0, f64::max);
    let min = rows
        .iter()
        .map(|r| r.sup_ratio)
        .fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::EmptyBall);
    }
    let spread = max / min;
    Ok(DensityBoundReport {
        radius,
        rows,
        spread,
        bounded: spread <= DENSITY_SPREAD_BOUND,
    })
}

/// (integral of phi, integral of grad phi . H - phi |H|^2, integral of phi |H|^2)
fn variation_terms(state: &FlowState, spec: &KernelSpec) -> (f64, f64, f64) {
    let surf = WeightedSurface::from_state(state);
    if spec.cutoff_radius.is_none() {
        let (mut vol, mut h2) = (0.0, 0.0);
        for s in &surf.samples {
            vol += s.weight;
            h2 += s.weight * norm_sq(&s.mean_curvature);
        }
        return (vol, -h2, h2);
    }
    let c = spec.center_v4();
    let r = spec.cutoff_radius.unwrap_or(0.0);
    let mut imgs = Vec::new();
    let (mut i, mut rhs, mut h2) = (0.0, 0.0, 0.0);
    for s in &surf.samples {
        surf.images(&s.point, &c, 2.0 * r, &mut imgs);
        let hh = norm_sq(&s.mean_curvature);
        for x in &imgs {
            let phi = spec.cutoff(x);
            let g = spec.cutoff_gradient(x);
            i += s.weight * phi;
            rhs += s.weight * (dot(&g, &s.mean_curvature) - phi * hh);
            h2 += s.weight * phi * hh;
        }
    }
    (i, rhs, h2)
}

/// Residual of d/dt int phi dmu = int (grad phi . H - phi |H|^2) dmu over
/// consecutive snapshots, normalized by the size of int phi |H|^2 and of the
/// right-hand side (floored at 1e-12 times the integral of phi); the max
/// over pairs.
pub fn first_variation_residual(trace: &FlowTrace, spec: &KernelSpec) -> Result<f64> {
    first_variation_residual_on(&trace.snapshots, spec)
}

pub fn first_variation_residual_on(snapshots: &[FlowState], spec: &KernelSpec) -> Result<f64> {
    spec.validate()?;
    if snapshots.len() < 2 {
        return Err(Error::NotEnoughSnapshots {
            needed: 2,
            have: snapshots.len(),
        });
    }
    let terms: Vec<_> = snapshots
        .par_iter()
        .map(|s| variation_terms(s, spec))
        .collect();
    let mut worst: f64 = 0.0;
    for (w, s) in terms.windows(2).zip(snapshots.windows(2)) {
        let dt = s[1].t - s[0].t;
        if !(dt > 0.0) {
            continue;
        }
        let lhs = (w[1].0 - w[0].0) / dt;
        let rhs = 0.5 * (w[0].1 + w[1].1);
        // the floor keeps roundoff on minimal surfaces from being amplified
        let floor = 1e-12 * 0.5 * (w[0].0 + w[1].0);
        let size = (0.5 * (w[0].2 + w[1].2)).max(rhs.abs()).max(floor);
        let d = (lhs - rhs).abs();
        worst = worst.max(if size > 0.0 { d / size } else { d });
    }
    Ok(worst)
}

/// c(n) = 2 int_0^inf exp(-y^2) y^{n+1} dy by composite Simpson on [0, 12].
pub fn c_constant(n: usize) -> f64 {
    let f = |y: f64| (-y * y).exp() * y.powi(n as i32 + 1);
    2.0 * simpson(f, 0.0, 12.0, 24_000)
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let m = intervals + intervals % 2;
    let h = (b - a) / m as f64;
    let mut s = f(a) + f(b);
    for k in 1..m {
        s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// The lower density bound 1 / (4 c(n) + 4). Reported, not used as a gate.
pub fn density_lower_bound(n: usize) -> f64 {
    1.0 / (4.0 * c_constant(n) + 4.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{run, FlowControls, Until};
    use crate::mesh::{build_scenario, Stencil};
    use crate::monitors::{gaussian_density, weighted_psi, MeasureSample};
    use crate::vector::ZERO;
    use std::f64::consts::{E, PI};

    fn controls(stride: usize) -> FlowControls {
        FlowControls {
            snapshot_stride: stride,
            ..FlowControls::default()
        }
    }

    /// Straight segment [-L, L] e^{i a} through the origin in C, sampled by
    /// the midpoint rule, carrying the constant angle a.
    fn tilted_line(a: f64, len: f64, m: usize) -> WeightedSurface {
        let h = 2.0 * len / m as f64;
        let dir = [a.cos(), a.sin(), 0.0, 0.0];
        let samples = (0..m)
            .map(|k| {
                let s = -len + (k as f64 + 0.5) * h;
                MeasureSample {
                    point: scale(&dir, s),
                    weight: h,
                    cos_theta: a.cos(),
                    mean_curvature: ZERO,
                    grad_cos_theta: ZERO,
                    tangents: [dir, ZERO],
                }
            })
            .collect();
        WeightedSurface {
            n: 1,
            periods: None,
            samples,
        }
    }

    #[test]
    fn tilted_plane_psi_is_inverse_cosine() {
        let a = 0.6;
        let surf = tilted_line(a, 20.0, 40_000);
        let spec = KernelSpec::new(&[0.0, 0.0], 1.0, None).unwrap();
        let k = kernel_integrals(&surf, &spec, 0.8, true).unwrap();
        assert!((k.psi - 1.0 / a.cos()).abs() < 1e-6);
        assert!((k.phi - 1.0).abs() < 1e-6);
        // a static plane through the center has no dissipation
        assert!(k.dissipation.abs() < 1e-12);
    }

    #[test]
    fn multiplicity_adds_density() {
        let mut surf = tilted_line(0.2, 20.0, 20_000);
        let other = tilted_line(1.1, 20.0, 20_000);
        surf.samples.extend(other.samples.iter().cloned());
        surf.samples.extend(other.samples);
        let spec = KernelSpec::new(&[0.0, 0.0], 1.0, None).unwrap();
        let k = kernel_integrals(&surf, &spec, 0.5, false).unwrap();
        assert!((k.phi - 3.0).abs() < 1e-3);
    }

    // Oracle: Phi of a round circle of radius r at backward time s is the
    // one-dimensional integral of (4 pi s)^{-1/2} exp(-r^2 / 4s) r d(angle).
    fn circle_density_oracle(r: f64, s: f64) -> f64 {
        let m = 4096;
        (0..m)
            .map(|_| {
                (4.0 * PI * s).powf(-0.5) * (-r * r / (4.0 * s)).exp() * r * 2.0 * PI / m as f64
            })
            .sum()
    }

    #[test]
    fn shrinker_densities() {
        let oracle = circle_density_oracle(1.0, 0.5);
        assert!((oracle - (2.0 * PI / E).sqrt()).abs() < 1e-12);

        let c = build_scenario("circle", &[1.0], 256).unwrap();
        let s = FlowState::new(c, 0.0, Stencil::Central4).unwrap();
        let spec = KernelSpec::new(&[0.0, 0.0], 0.5, None).unwrap();
        let phi = gaussian_density(&s, &spec).unwrap();
        assert!((phi / oracle - 1.0).abs() < 1e-2, "{phi}");
        // the circle is not almost calibrated
        assert!(weighted_psi(&s, &spec).is_err());

        let t = build_scenario("clifford_torus", &[1.0], 64).unwrap();
        let s = FlowState::new(t, 0.0, Stencil::Central4).unwrap();
        let spec = KernelSpec::new(&[0.0; 4], 0.5, None).unwrap();
        let phi = gaussian_density(&s, &spec).unwrap();
        assert!((phi / (oracle * oracle) - 1.0).abs() < 1e-2, "{phi}");
        assert!(phi > 1.1);
    }

    #[test]
    fn psi_dominates_phi() {
        let g = build_scenario("lagrangian_graph", &[0.1, 0.1], 32).unwrap();
        let s = FlowState::new(g, 0.0, Stencil::Central4).unwrap();
        for (c, t0) in [([0.0, 0.0, -0.1, -0.1], 0.1), ([1.0, 2.0, 0.0, 0.3], 0.7)] {
            let spec = KernelSpec::new(&c, t0, Some(1.5)).unwrap();
            let psi = weighted_psi(&s, &spec).unwrap();
            let phi = gaussian_density(&s, &spec).unwrap();
            assert!(psi > phi && phi > 0.0);
            assert!(psi <= phi / s.geometry.min_cos_theta() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn static_plane_psi_report() {
        let flat = build_scenario("lagrangian_graph", &[0.0, 0.0], 16).unwrap();
        let tr = run(flat, Until::Time(0.05), &controls(1)).unwrap();
        let spec = KernelSpec::new(&[0.5, 0.0, 0.0, 0.0], 1.0, None).unwrap();
        let rep = psi_monotonicity_report(&tr, &spec, 0.0).unwrap();
        assert!(!rep.pairs.is_empty());
        for p in &rep.pairs {
            assert!(p.rate.abs() < 1e-12 && p.dissipation.abs() < 1e-12);
            assert!(p.margin.abs() < 1e-12);
        }
    }

    #[test]
    fn psi_report_on_graph_flow() {
        let spec = KernelSpec::new(&[0.0; 4], 1.0, None).unwrap();
        let coarse = run(
            build_scenario("lagrangian_graph", &[0.1, 0.1], 16).unwrap(),
            Until::Time(0.3),
            &controls(1),
        )
        .unwrap();
        let fine = run(
            build_scenario("lagrangian_graph", &[0.1, 0.1], 32).unwrap(),
            Until::Time(0.3),
            &controls(1),
        )
        .unwrap();
        let c = calibrate_psi_tolerance(&[&coarse, &fine], &spec).unwrap();
        assert!(c.is_finite() && c > 0.0);
        let rep = psi_monotonicity_report(&fine, &spec, c).unwrap();
        assert_eq!(rep.refusals, 0);
        assert!(rep.all_nonincreasing);
        assert!(rep.hold_fraction >= 0.99);
    }

    #[test]
    fn psi_report_records_refusals() {
        let t = build_scenario("clifford_torus", &[1.0], 32).unwrap();
        let tr = run(t, Until::Time(0.01), &controls(5)).unwrap();
        let spec = KernelSpec::new(&[0.0; 4], 0.5, None).unwrap();
        let rep = psi_monotonicity_report(&tr, &spec, 1.0).unwrap();
        assert_eq!(rep.refusals, rep.samples.len());
        assert!(rep.pairs.is_empty());
    }

    #[test]
    fn first_variation_cases() {
        // area decay of the shrinking circle
        let c = build_scenario("circle", &[1.0], 128).unwrap();
        let tr = run(c, Until::Time(0.05), &controls(10)).unwrap();
        let none = KernelSpec::new(&[0.0, 0.0], 1.0, None).unwrap();
        let r = first_variation_residual(&tr, &none).unwrap();
        assert!(r < 1e-2, "{r}");

        // static flat torus
        let flat = build_scenario("lagrangian_graph", &[0.0, 0.0], 16).unwrap();
        let tr = run(flat, Until::Time(0.02), &controls(1)).unwrap();
        let bump = KernelSpec::new(&[0.3, 0.0, 0.0, 0.0], 1.0, Some(0.7)).unwrap();
        assert!(first_variation_residual(&tr, &bump).unwrap() < 1e-9);
        assert!(first_variation_residual(&tr, &none).unwrap() < 1e-9);

        // Clifford torus with a bump whose transition annulus meets the torus
        let t = build_scenario("clifford_torus", &[1.0], 64).unwrap();
        let tr = run(t, Until::Time(0.02), &controls(20)).unwrap();
        let spec = KernelSpec::new(&[1.0, 0.0, 0.0, 0.0], 1.0, Some(0.6)).unwrap();
        let r = first_variation_residual(&tr, &spec).unwrap();
        assert!(r < 1e-2, "{r}");
    }

    #[test]
    fn c_constant_values() {
        assert!((c_constant(2) - 1.0).abs() < 1e-10);
        assert!((c_constant(1) - PI.sqrt() / 2.0).abs() < 1e-10);
        assert!((density_lower_bound(2) - 0.125).abs() < 1e-10);
        assert!((unit_ball_volume(3) - 4.0 * PI / 3.0).abs() < 1e-12);
    }

    #[test]
    fn area_in_ball_counts_images() {
        let mut line = tilted_line(0.0, 0.5, 1000);
        line.periods = Some(vec![1.0]);
        // one period of a horizontal line; the ball of radius 2 sees four copies
        let a = area_in_ball(&line, &[0.0, 0.0], 2.0);
        assert!((a - 4.0).abs() < 1e-2, "{a}");
    }
}
