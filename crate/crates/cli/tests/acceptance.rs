//! Acceptance criteria, one PASS/FAIL line each. Runs without the test
//! harness so the lines are always printed; the process fails if any
//! criterion does.

use std::fmt::Display;
use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use lagflow_cli::{cmd_verify, Exit};
use lagflow_core::blowup::{
    angle_constancy, complex_structure_witness, density_ratio, fit_planes, orthonormalize,
    plane_union_cloud, principal_angle, rescaled_theta_identity, self_shrinker_residual,
    time_rescale, witness_plane_pair, AngleParams, FitParams, PlaneSpec, RescaledCloud,
};
use lagflow_core::flow::{self, classify_type, FlowControls, FlowTrace, TypeClass, Until};
use lagflow_core::mesh::{Scenario, Stencil};
use lagflow_core::monitors::{
    calibrate_psi_tolerance, gaussian_density, psi_monotonicity_report, volume_density_bound,
    weighted_psi, KernelSpec,
};
use lagflow_core::verify::{oracle_quadrature, Integrand};
use lagflow_core::Error;
use tempfile::TempDir;

/// Accumulates the sub-checks of one criterion.
#[derive(Default)]
struct Tally {
    failed: bool,
    parts: Vec<String>,
}

impl Tally {
    fn record(&mut self, ok: bool, text: String) {
        self.failed |= !ok;
        self.parts.push(if ok { text } else { format!("{text} VIOLATED") });
    }

    fn at_most(&mut self, what: &str, v: f64, bound: f64) {
        self.record(v <= bound, format!("{what} {v:.3e} <= {bound:e}"));
    }

    fn at_least(&mut self, what: &str, v: f64, bound: f64) {
        self.record(v >= bound, format!("{what} {v:.4} >= {bound}"));
    }

    fn holds(&mut self, what: &str, ok: bool) {
        self.record(ok, what.to_string());
    }

    fn error(&mut self, what: &str, e: impl Display) {
        self.record(false, format!("{what}: {e}"));
    }

    fn ok<T>(&mut self, what: &str, r: Result<T, Error>) -> Option<T> {
        r.map_err(|e| self.error(what, e)).ok()
    }
}

fn controls(stride: usize) -> FlowControls {
    FlowControls {
        snapshot_stride: stride,
        ..FlowControls::default()
    }
}

fn timed_run(scenario: Scenario, until: Until, stride: usize) -> (Result<FlowTrace, Error>, Duration) {
    let start = Instant::now();
    let tr = scenario.build().and_then(|im| flow::run(im, until, &controls(stride)));
    (tr, start.elapsed())
}

fn circle(resolution: usize) -> Scenario {
    Scenario::Circle { r0: 1.0, resolution }
}

fn clifford(resolution: usize) -> Scenario {
    Scenario::CliffordTorus { r0: 1.0, resolution }
}

fn graph(resolution: usize) -> Scenario {
    Scenario::LagrangianGraph { eps: 0.1, delta: 0.1, resolution }
}

struct Shrinker {
    name: &'static str,
    trace: FlowTrace,
    runtime: Duration,
    /// The same flow on half the grid.
    coarse: FlowTrace,
    plateau: f64,
    density: f64,
}

fn radius_error(tr: &FlowTrace) -> f64 {
    let n = tr.n();
    let mut worst: f64 = 0.0;
    for s in &tr.snapshots {
        let r = (1.0 - 2.0 * s.t).sqrt();
        if r <= 0.2 {
            continue;
        }
        for p in s.immersion.positions() {
            for k in 0..n {
                let got = (p[k] * p[k] + p[n + k] * p[n + k]).sqrt();
                worst = worst.max((got - r).abs() / r);
            }
        }
    }
    worst
}

fn singular_point(tr: &FlowTrace) -> Result<(f64, Vec<f64>), Error> {
    let rep = tr.singularity_report.as_ref().ok_or(Error::NoSingularityReport)?;
    if !rep.t_reliable {
        return Err(Error::UnreliableEstimate(rep.fit_note.clone().unwrap_or_default()));
    }
    Ok((rep.estimated_t, rep.x0.clone()))
}

fn exact_shrinker_laws(refs: &[Shrinker]) -> Tally {
    let mut t = Tally::default();
    for s in refs {
        t.at_most(&format!("{} radius error", s.name), radius_error(&s.trace), 1e-3);
        if let Some((ts, _)) = t.ok(&format!("{} T", s.name), singular_point(&s.trace)) {
            t.at_most(&format!("{} |T - 0.5| / 0.5", s.name), (ts - 0.5).abs() / 0.5, 1e-2);
        }
        let secs = s.runtime.as_secs_f64();
        t.record(secs < 60.0, format!("{} runtime {secs:.1} s < 60 s", s.name));
    }
    t
}

fn type_classification(refs: &[Shrinker]) -> Tally {
    let mut t = Tally::default();
    for s in refs {
        let Some(rep) = s.trace.singularity_report.as_ref() else {
            t.error(s.name, "no singularity report");
            continue;
        };
        let ind = &rep.type_indicator;
        let window = &ind[ind.len() / 10..ind.len() * 9 / 10];
        let dev = window
            .iter()
            .map(|(_, v)| (v / s.plateau - 1.0).abs())
            .fold(0.0, f64::max);
        t.at_most(
            &format!("{} middle-80% deviation from {}", s.name, s.plateau),
            dev,
            0.02,
        );
        if let Some(r) = t.ok(s.name, classify_type(&s.trace)) {
            t.holds(&format!("{} classified {:?}", s.name, r.classification), r.classification == TypeClass::TypeI);
        }
    }
    t
}

fn gaussian_density_at_singularity(refs: &[Shrinker]) -> Tally {
    let mut t = Tally::default();
    for s in refs {
        let Some((ts, x0)) = t.ok(s.name, singular_point(&s.trace)) else { continue };
        let Some(spec) = t.ok(s.name, KernelSpec::new(&x0, ts, None)) else { continue };
        let snaps = &s.trace.snapshots;
        for state in [&snaps[0], &snaps[snaps.len() / 2]] {
            let r = (1.0 - 2.0 * state.t).sqrt();
            let tau = 0.5 - state.t;
            let integrand = if s.trace.n() == 1 {
                Integrand::CircleDensity { radius: r, tau, offset: 0.0 }
            } else {
                Integrand::CliffordDensity { radius: r, tau }
            };
            let label = format!("{} at t = {:.3}", s.name, state.t);
            let (Some(phi), Some(oracle)) = (
                t.ok(&label, gaussian_density(state, &spec)),
                t.ok(&label, oracle_quadrature(&integrand, 2)),
            ) else {
                continue;
            };
            t.at_most(&format!("{label} |Phi / oracle - 1|"), (phi / oracle - 1.0).abs(), 1e-2);
            t.at_most(&format!("{label} |Phi / closed form - 1|"), (phi / s.density - 1.0).abs(), 1e-2);
            t.at_least(&format!("{label} Phi"), phi, 1.1);
        }
    }
    t
}

fn weighted_monotonicity(coarse: &FlowTrace, fine: &FlowTrace) -> Tally {
    let mut t = Tally::default();
    let spec = KernelSpec::new(&[0.0; 4], 1.0, None).expect("valid kernel");
    let Some(c_ref) = t.ok("calibration", calibrate_psi_tolerance(&[coarse, fine], &spec)) else {
        return t;
    };
    let Some(rep) = t.ok("report", psi_monotonicity_report(fine, &spec, c_ref)) else {
        return t;
    };
    t.holds(&format!("{} refusals", rep.refusals), rep.refusals == 0);
    t.holds(
        &format!("Psi nonincreasing at all {} steps (C_ref {c_ref:.3e})", rep.pairs.len()),
        rep.all_nonincreasing && rep.pairs.len() + 1 == fine.snapshots.len(),
    );
    t.at_least("fraction with dPsi/dt <= -D + tol", rep.hold_fraction, 0.99);
    t
}

fn rescaled_identities(refs: &[Shrinker]) -> Tally {
    let mut t = Tally::default();
    for s in refs {
        let Some(fine) = t.ok(s.name, time_rescale(&s.trace)) else { continue };
        let Some(coarse) = t.ok(s.name, time_rescale(&s.coarse)) else { continue };
        let shrinker = fine.iter().map(self_shrinker_residual).fold(0.0, f64::max);
        t.at_most(&format!("{} self-shrinker residual", s.name), shrinker, 1e-3);
        let theta = |seq: &[RescaledCloud]| rescaled_theta_identity(seq, Stencil::Central2);
        let (Some(a), Some(b)) = (t.ok(s.name, theta(&coarse)), t.ok(s.name, theta(&fine))) else {
            continue;
        };
        t.at_most(&format!("{} angle identity", s.name), b, 1e-2);
        t.at_most(&format!("{} angle identity on half grid", s.name), a, 1e-2);
        let ratio = a / b;
        t.record(
            (3.5..=4.5).contains(&ratio),
            format!("{} refinement ratio {ratio:.2} in [3.5, 4.5]", s.name),
        );
    }
    t
}

fn min_cos_drop(tr: &FlowTrace) -> f64 {
    let m: Vec<f64> = tr.records().map(|r| r.min_cos_theta).collect();
    m.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max)
}

fn maximum_principle(calibrated: &[(&str, &FlowTrace)], refs: &[Shrinker]) -> Tally {
    let mut t = Tally::default();
    for (name, tr) in calibrated {
        t.at_most(&format!("{name} min cos drop per step"), min_cos_drop(tr), 1e-8);
    }
    for s in refs {
        let Some((ts, x0)) = t.ok(s.name, singular_point(&s.trace)) else { continue };
        let Some(spec) = t.ok(s.name, KernelSpec::new(&x0, ts, None)) else { continue };
        let before: Vec<_> = s.trace.snapshots.iter().filter(|x| x.t < ts).collect();
        let refused = before
            .iter()
            .filter(|x| matches!(weighted_psi(x, &spec), Err(Error::WeightUndefined { .. })))
            .count();
        t.holds(
            &format!("{} Psi refused at {refused}/{} snapshots", s.name, before.len()),
            refused == before.len() && refused > 0,
        );
    }
    t
}

fn recovery_error(cluster: &lagflow_core::blowup::PlaneCluster, truth: &[PlaneSpec]) -> Result<f64, Error> {
    let mut worst: f64 = 0.0;
    for p in truth {
        let e = orthonormalize(&p.basis, cluster.n)?;
        let best = cluster
            .planes
            .iter()
            .map(|q| principal_angle(&e, &q.basis_v4(), cluster.n))
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(best);
    }
    Ok(worst)
}

fn tangent_cone_toolchain() -> Tally {
    let mut t = Tally::default();
    let params = FitParams::default();
    let run = |t: &mut Tally| -> Result<(), Error> {
        let truth = witness_plane_pair(0.8)?;
        let cloud = plane_union_cloud(2, &truth, 1.0, 100, 100)?;
        let fit = fit_planes(&cloud, &params)?;
        t.holds(&format!("{} planes fitted", fit.planes.len()), fit.planes.len() == 2);
        t.at_most("principal-angle error", recovery_error(&fit, &truth)?, 1e-6);
        let eta: Vec<u32> = fit.planes.iter().map(|p| p.multiplicity).collect();
        t.holds(&format!("multiplicities {eta:?}"), eta.iter().all(|m| *m == 1));
        let osc = angle_constancy(&cloud, &AngleParams::default())?.oscillation;
        t.at_most("angle oscillation", osc, 1e-6);
        let w = complex_structure_witness(&fit, 1e-6)?;
        t.at_most("witness invariance residual", w.max_residual, 1e-6);

        let one = plane_union_cloud(2, &truth[..1], 1.0, 50, 50)?;
        let dup = fit_planes(&one.union(&one)?, &params)?;
        let eta: Vec<u32> = dup.planes.iter().map(|p| p.multiplicity).collect();
        t.holds(&format!("duplicated plane multiplicities {eta:?}"), eta == [2]);
        Ok(())
    };
    if let Err(e) = run(&mut t) {
        t.error("toolchain", e);
    }
    t
}

fn density_machinery(clifford: &FlowTrace) -> Tally {
    let mut t = Tally::default();
    if let Some(rep) = t.ok("volume density", volume_density_bound(clifford, 1.0, &[1.0, 2.0, 4.0, 8.0])) {
        t.at_most("Clifford volume-density max/min over lambda 1..8", rep.spread, 10.0);
    }
    let radii: Vec<f64> = (1..=9).map(|k| 0.1 * k as f64).collect();
    let line = |a: f64| PlaneSpec {
        basis: [[a.cos(), a.sin(), 0.0, 0.0], [0.0; 4]],
        theta: a,
    };
    let clouds = [
        ("Lagrangian pair", witness_plane_pair(0.8).and_then(|p| plane_union_cloud(2, &p, 1.0, 400, 400))),
        ("line pair", plane_union_cloud(1, &[line(0.0), line(1.0)], 1.0, 2000, 1)),
    ];
    for (name, cloud) in clouds {
        let Some(cloud) = t.ok(name, cloud) else { continue };
        for shift in [0.0, 0.05] {
            let mut xi = vec![0.0; 2 * cloud.n];
            xi[0] = shift;
            let Some(r) = t.ok(name, density_ratio(&cloud, &xi, &radii)) else { continue };
            let drop = r.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max);
            t.at_most(&format!("{name} ratio drop about x1 = {shift}"), drop, 1e-3);
        }
    }
    if let Some(c2) = t.ok("c(2)", oracle_quadrature(&Integrand::CConstant { n: 2 }, 2)) {
        t.at_most("|c(2) - 1|", (c2 - 1.0).abs(), 1e-8);
    }
    t
}

fn determinism() -> Tally {
    let mut t = Tally::default();
    let tmp = TempDir::new().expect("temporary directory");
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let dir = tmp.path().join(run);
        let exit = cmd_verify(None, &[], Some(&dir), None);
        t.holds(
            &format!("run {run} exit {}", exit.code()),
            matches!(exit, Exit::Ok | Exit::CheckFailure),
        );
        match fs::read(dir.join("report.json")) {
            Ok(b) => reports.push(b),
            Err(e) => t.error(run, e),
        }
    }
    if reports.len() == 2 {
        t.holds(
            &format!("report.json byte-identical ({} bytes)", reports[0].len()),
            reports[0] == reports[1],
        );
    }
    t
}

fn main() -> ExitCode {
    // Timed one after the other so neither competes for the workers.
    let (circle_ref, circle_time) = timed_run(circle(256), Until::SINGULARITY, 200);
    let (clifford_ref, clifford_time) = timed_run(clifford(64), Until::SINGULARITY, 100);
    let (circle_half, _) = timed_run(circle(128), Until::SINGULARITY, 200);
    let (clifford_half, _) = timed_run(clifford(32), Until::SINGULARITY, 100);
    let (graph_coarse, _) = timed_run(graph(16), Until::Time(0.3), 1);
    let (graph_fine, _) = timed_run(graph(32), Until::Time(0.3), 1);
    let (graph_long, _) = timed_run(graph(16), Until::Time(5.0), 1000);
    let (curve, _) = timed_run(Scenario::GraphCurve { eps: 0.3, resolution: 64 }, Until::Time(0.5), 100);

    let runs = [
        ("circle(1, 256)", circle_ref),
        ("clifford_torus(1, 64)", clifford_ref),
        ("circle(1, 128)", circle_half),
        ("clifford_torus(1, 32)", clifford_half),
        ("lagrangian_graph(0.1, 0.1, 16)", graph_coarse),
        ("lagrangian_graph(0.1, 0.1, 32)", graph_fine),
        ("lagrangian_graph(0.1, 0.1, 16) until 5", graph_long),
        ("graph_curve(0.3, 64)", curve),
    ];
    let mut traces = Vec::new();
    for (name, r) in runs {
        match r {
            Ok(tr) => traces.push(tr),
            Err(e) => {
                println!("FAIL flow run {name}: {e}");
                return ExitCode::FAILURE;
            }
        }
    }
    let mut it = traces.into_iter();
    let mut next = || it.next().expect("eight runs");
    let (c256, k64, c128, k32) = (next(), next(), next(), next());
    let (g16, g32, g_long, curve) = (next(), next(), next(), next());
    let refs = [
        Shrinker {
            name: "circle",
            trace: c256,
            runtime: circle_time,
            coarse: c128,
            plateau: 0.5,
            density: (std::f64::consts::TAU / std::f64::consts::E).sqrt(),
        },
        Shrinker {
            name: "Clifford",
            trace: k64,
            runtime: clifford_time,
            coarse: k32,
            plateau: 1.0,
            density: std::f64::consts::TAU / std::f64::consts::E,
        },
    ];

    let criteria: Vec<(&str, Box<dyn Fn() -> Tally + '_>)> = vec![
        ("exact shrinker laws", Box::new(|| exact_shrinker_laws(&refs))),
        ("type classification", Box::new(|| type_classification(&refs))),
        ("Gaussian density at the singular point", Box::new(|| gaussian_density_at_singularity(&refs))),
        ("weighted monotonicity", Box::new(|| weighted_monotonicity(&g16, &g32))),
        ("rescaled-flow identities", Box::new(|| rescaled_identities(&refs))),
        (
            "maximum principle",
            Box::new(|| {
                maximum_principle(
                    &[
                        ("graph_curve(0.3, 64)", &curve),
                        ("lagrangian_graph(0.1, 0.1, 32)", &g32),
                        ("lagrangian_graph(0.1, 0.1, 16) until 5", &g_long),
                    ],
                    &refs,
                )
            }),
        ),
        ("tangent-cone toolchain", Box::new(tangent_cone_toolchain)),
        ("density machinery", Box::new(|| density_machinery(&refs[1].trace))),
        ("determinism of verify reports", Box::new(determinism)),
    ];

    let mut failed = 0;
    for (k, (title, f)) in criteria.iter().enumerate() {
        let t = f();
        failed += t.failed as usize;
        println!(
            "{} criterion {}: {title}: {}",
            if t.failed { "FAIL" } else { "PASS" },
            k + 1,
            t.parts.join("; ")
        );
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
