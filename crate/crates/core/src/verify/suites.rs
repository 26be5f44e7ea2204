use std::f64::consts::{PI, TAU};

use rayon::prelude::*;

use super::oracle::{oracle_quadrature, Integrand};
use super::{Outcome, Sense, VerifyConfig};
use crate::blowup::{
    angle_constancy, complex_structure_witness, density_ratio, fit_planes, flatness_check,
    lambda_rescale, orthonormalize, plane_union_cloud, principal_angle, rescaled_flow_residual,
    rescaled_theta_identity, scaling_identity_defect, self_shrinker_residual, time_rescale,
    witness_plane_pair, AngleParams, FitParams, PlaneCluster, PlaneSpec, RescaledCloud,
};
use crate::error::{Error, Result};
use crate::flow::{
    classify_type, plateau_stats, run, theta_heat_residual, FlowControls, FlowTrace, TypeClass,
    Until,
};
use crate::mesh::{
    angle_gradient_residual, compute_geometry, compute_geometry_with, lagrangian_residual,
    Scenario, Stencil,
};
use crate::monitors::{
    c_constant, calibrate_psi_tolerance, first_variation_residual, gaussian_density,
    psi_monotonicity_report, volume_density_bound, KernelSpec, DENSITY_SPREAD_BOUND,
};
use crate::vector::norm;

/// A flow run shared by the checks that need it.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub scenario: Scenario,
    pub until: Until,
    pub controls: FlowControls,
}

impl RunSpec {
    fn new(scenario: Scenario, until: Until, stride: usize) -> Self {
        RunSpec {
            scenario,
            until,
            controls: FlowControls {
                snapshot_stride: stride,
                ..FlowControls::default()
            },
        }
    }

    pub fn label(&self) -> String {
        label(&self.scenario)
    }
}

pub fn label(s: &Scenario) -> String {
    match *s {
        Scenario::Circle { r0, resolution } => format!("circle({r0}, {resolution})"),
        Scenario::GraphCurve { eps, resolution } => format!("graph_curve({eps}, {resolution})"),
        Scenario::CliffordTorus { r0, resolution } => {
            format!("clifford_torus({r0}, {resolution})")
        }
        Scenario::LagrangianGraph {
            eps,
            delta,
            resolution,
        } => format!("lagrangian_graph({eps}, {delta}, {resolution})"),
        Scenario::PerturbedClifford {
            r0,
            eps,
            resolution,
        } => format!("perturbed_clifford({r0}, {eps}, {resolution})"),
    }
}

pub(crate) type Group = Box<dyn Fn(&Context) -> Vec<Outcome> + Send + Sync>;

pub(crate) struct Plan {
    pub runs: Vec<RunSpec>,
    pub groups: Vec<Group>,
}

impl Plan {
    fn need(&mut self, r: &RunSpec) {
        if !self.runs.contains(r) {
            self.runs.push(r.clone());
        }
    }
}

pub(crate) struct Context<'a> {
    pub config: &'a VerifyConfig,
    pub runs: &'a [RunSpec],
    pub traces: &'a [FlowTrace],
}

impl Context<'_> {
    fn trace(&self, r: &RunSpec) -> &FlowTrace {
        let k = self
            .runs
            .iter()
            .position(|x| x == r)
            .expect("run was planned");
        &self.traces[k]
    }
}

/// All planned flows, run in parallel before any check starts.
pub(crate) fn run_traces(runs: &[RunSpec]) -> Result<Vec<FlowTrace>> {
    runs.par_iter()
        .map(|r| run(r.scenario.build()?, r.until, &r.controls))
        .collect()
}

fn outcome(
    check: &'static str,
    scenario: impl Into<String>,
    sense: Sense,
    bound: f64,
    value: Result<f64>,
    provenance: Option<&'static str>,
) -> Outcome {
    Outcome {
        check,
        scenario: scenario.into(),
        sense,
        default_bound: bound,
        value,
        provenance,
    }
}

fn upper(
    check: &'static str,
    scenario: impl Into<String>,
    bound: f64,
    value: Result<f64>,
) -> Outcome {
    outcome(check, scenario, Sense::Upper, bound, value, None)
}

fn lower(
    check: &'static str,
    scenario: impl Into<String>,
    bound: f64,
    value: Result<f64>,
) -> Outcome {
    outcome(check, scenario, Sense::Lower, bound, value, None)
}

fn circle(r0: f64, resolution: usize) -> Scenario {
    Scenario::Circle { r0, resolution }
}

fn clifford(r0: f64, resolution: usize) -> Scenario {
    Scenario::CliffordTorus { r0, resolution }
}

fn graph(eps: f64, delta: f64, resolution: usize) -> Scenario {
    Scenario::LagrangianGraph {
        eps,
        delta,
        resolution,
    }
}

// Reference runs to the singularity, shared across suites.
fn circle_ref(c: &VerifyConfig) -> RunSpec {
    RunSpec::new(circle(1.0, c.resolutions.circle), Until::SINGULARITY, 200)
}

fn circle_half(c: &VerifyConfig) -> RunSpec {
    RunSpec::new(
        circle(1.0, c.resolutions.circle / 2),
        Until::SINGULARITY,
        200,
    )
}

fn clifford_ref(c: &VerifyConfig) -> RunSpec {
    RunSpec::new(
        clifford(1.0, c.resolutions.clifford),
        Until::SINGULARITY,
        100,
    )
}

fn clifford_half(c: &VerifyConfig) -> RunSpec {
    RunSpec::new(
        clifford(1.0, c.resolutions.clifford / 2),
        Until::SINGULARITY,
        100,
    )
}

/// The volume-density sup is taken over snapshots, so it needs them dense.
fn clifford_dense(c: &VerifyConfig) -> RunSpec {
    RunSpec::new(
        clifford(1.0, c.resolutions.clifford / 2),
        Until::SINGULARITY,
        5,
    )
}

fn graph_run(resolution: usize) -> RunSpec {
    RunSpec::new(graph(0.1, 0.1, resolution), Until::Time(0.3), 1)
}

pub(crate) fn plan(suites: &[&str], config: &VerifyConfig) -> Plan {
    let mut p = Plan {
        runs: Vec::new(),
        groups: Vec::new(),
    };
    for s in suites {
        match *s {
            "geometry" => geometry(&mut p),
            "flow_exact" => flow_exact(&mut p, config),
            "monotonicity" => monotonicity(&mut p, config),
            "rescaling" => rescaling(&mut p, config),
            "tangent_cone" => tangent_cone(&mut p),
            "type_classification" => type_classification(&mut p, config),
            other => unreachable!("suite `{other}` was validated"),
        }
    }
    p
}

fn wrapped(a: f64) -> f64 {
    let d = a.rem_euclid(TAU);
    d.min(TAU - d)
}

fn geometry(p: &mut Plan) {
    p.groups.push(Box::new(|_| {
        [
            graph(0.1, 0.1, 32),
            clifford(1.0, 32),
            Scenario::PerturbedClifford {
                r0: 1.0,
                eps: 0.2,
                resolution: 32,
            },
        ]
        .iter()
        .map(|s| {
            upper(
                "geometry.lagrangian_residual",
                label(s),
                1e-12,
                s.build().and_then(|im| lagrangian_residual(&im)),
            )
        })
        .collect()
    }));
    p.groups.push(Box::new(|_| {
        [circle(1.0, 128), clifford(1.0, 64)]
            .iter()
            .map(|s| {
                let v = s
                    .build()
                    .and_then(|im| compute_geometry(&im))
                    .map(|g| angle_gradient_residual(&g));
                upper("geometry.angle_gradient_residual", label(s), 1e-3, v)
            })
            .collect()
    }));
    p.groups.push(Box::new(|_| {
        let s = clifford(1.0, 32);
        let geo = s
            .build()
            .and_then(|im| compute_geometry_with(&im, Stencil::Central4, None));
        let angle = geo.as_ref().map_err(Clone::clone).map(|g| {
            g.vertices
                .iter()
                .enumerate()
                .map(|(k, v)| {
                    let [u, w] = g.grid.params(k);
                    wrapped(v.theta - (u + w + PI))
                })
                .fold(0.0, f64::max)
        });
        let curvature = geo.as_ref().map_err(Clone::clone).map(|g| {
            g.vertices
                .iter()
                .map(|v| {
                    let h2: f64 = v.mean_curvature.iter().map(|x| x * x).sum();
                    ((v.norm_a_sq - 2.0).abs()).max((h2 - 2.0).abs()) / 2.0
                })
                .fold(0.0, f64::max)
        });
        vec![
            outcome(
                "geometry.clifford_angle",
                label(&s),
                Sense::Upper,
                1e-10,
                angle,
                Some("theta = u + v + pi"),
            ),
            outcome(
                "geometry.clifford_curvature",
                label(&s),
                Sense::Upper,
                1e-3,
                curvature,
                Some("|A|^2 = |H|^2 = 2 on the unit product of circles"),
            ),
        ]
    }));
    p.groups.push(Box::new(|_| {
        let (eps, delta) = (0.1, 0.1);
        let s = graph(eps, delta, 32);
        let v = s
            .build()
            .and_then(|im| compute_geometry_with(&im, Stencil::Central4, None))
            .map(|g| {
                g.vertices
                    .iter()
                    .enumerate()
                    .map(|(k, v)| {
                        let [x, y] = g.grid.params(k);
                        let want = (-eps * x.cos()).atan() + (-delta * y.cos()).atan();
                        (v.theta - want).abs()
                    })
                    .fold(0.0, f64::max)
            });
        vec![outcome(
            "geometry.graph_angle",
            label(&s),
            Sense::Upper,
            1e-4,
            v,
            Some("theta = sum of arctan of the Hessian eigenvalues"),
        )]
    }));
}

/// Largest relative deviation of the factor radii from sqrt(1 - 2t) over
/// snapshots where that radius exceeds 0.2.
fn radius_law_error(tr: &FlowTrace) -> Result<f64> {
    let n = tr.n();
    let mut worst: f64 = 0.0;
    let mut used = 0;
    for s in &tr.snapshots {
        let want = (1.0 - 2.0 * s.t).sqrt();
        if !(want > 0.2) {
            continue;
        }
        used += 1;
        for p in s.immersion.positions() {
            for k in 0..n {
                worst = worst.max((p[k].hypot(p[n + k]) - want).abs() / want);
            }
        }
    }
    if used < 2 {
        return Err(Error::NotEnoughSnapshots {
            needed: 2,
            have: used,
        });
    }
    Ok(worst)
}

fn singular_time(tr: &FlowTrace) -> Result<f64> {
    let rep = tr
        .singularity_report
        .as_ref()
        .ok_or(Error::NoSingularityReport)?;
    if !rep.t_reliable {
        return Err(Error::UnreliableEstimate(
            rep.fit_note.clone().unwrap_or_default(),
        ));
    }
    Ok(rep.estimated_t)
}

fn flow_exact(p: &mut Plan, c: &VerifyConfig) {
    for r in [circle_ref(c), clifford_ref(c)] {
        p.need(&r);
        p.groups.push(Box::new(move |ctx| {
            let tr = ctx.trace(&r);
            let x0 = tr
                .singularity_report
                .as_ref()
                .ok_or(Error::NoSingularityReport)
                .map(|rep| rep.x0.iter().map(|x| x * x).sum::<f64>().sqrt());
            vec![
                outcome(
                    "flow_exact.radius_law",
                    r.label(),
                    Sense::Upper,
                    1e-3,
                    radius_law_error(tr),
                    Some("r(t) = sqrt(1 - 2t)"),
                ),
                outcome(
                    "flow_exact.singular_time",
                    r.label(),
                    Sense::Upper,
                    1e-2,
                    singular_time(tr).map(|t| (t - 0.5).abs() / 0.5),
                    Some("T = r0^2 / 2"),
                ),
                outcome(
                    "flow_exact.singular_point",
                    r.label(),
                    Sense::Upper,
                    0.05,
                    x0,
                    Some("X0 = 0"),
                ),
                upper(
                    "flow_exact.lagrangian_preserved",
                    r.label(),
                    1e-10,
                    Ok(tr.max_lagrangian_residual),
                ),
            ]
        }));
    }

    let long = RunSpec::new(graph(0.1, 0.1, 16), Until::Time(5.0), 1000);
    p.need(&long);
    p.groups.push(Box::new(move |ctx| {
        let tr = ctx.trace(&long);
        let v = if tr.singularity_report.is_some() {
            Err(Error::InvalidParameter(
                "smooth flow reported a singularity".into(),
            ))
        } else {
            Ok(tr.step_log.last().map(|r| r.max_a_sq).unwrap_or(f64::NAN))
        };
        vec![
            upper("flow_exact.graph_flattens", long.label(), 1e-4, v),
            upper(
                "flow_exact.lagrangian_preserved",
                long.label(),
                1e-10,
                Ok(tr.max_lagrangian_residual),
            ),
        ]
    }));

    let mut short_circle = RunSpec::new(circle(1.0, 128), Until::Time(1e-3), 1);
    short_circle.controls.dt_max = Some(1e-4);
    let short_clifford = RunSpec::new(clifford(1.0, 32), Until::Time(0.05), 10);
    for r in [short_circle, short_clifford] {
        p.need(&r);
        p.groups.push(Box::new(move |ctx| {
            vec![upper(
                "flow_exact.theta_heat",
                r.label(),
                1e-2,
                theta_heat_residual(ctx.trace(&r)),
            )]
        }));
    }
}

/// Largest drop of min cos(theta) between consecutive accepted steps.
fn min_cos_drop(tr: &FlowTrace) -> f64 {
    let m: Vec<f64> = tr.records().map(|r| r.min_cos_theta).collect();
    m.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max)
}

fn monotonicity(p: &mut Plan, c: &VerifyConfig) {
    let (coarse, fine) = (
        graph_run(c.resolutions.graph / 2),
        graph_run(c.resolutions.graph),
    );
    p.need(&coarse);
    p.need(&fine);
    {
        let (coarse, fine) = (coarse.clone(), fine.clone());
        p.groups.push(Box::new(move |ctx| {
            let spec = KernelSpec::new(&[0.0; 4], 1.0, None).expect("valid kernel");
            let (a, b) = (ctx.trace(&coarse), ctx.trace(&fine));
            let rep = calibrate_psi_tolerance(&[a, b], &spec)
                .and_then(|c_ref| psi_monotonicity_report(b, &spec, c_ref));
            let refused = |r: &crate::monitors::PsiReport| {
                if r.refusals > 0 {
                    Err(Error::InvalidParameter(format!(
                        "{} snapshots refused",
                        r.refusals
                    )))
                } else {
                    Ok(())
                }
            };
            let hold = rep.as_ref().map_err(Clone::clone).and_then(|r| {
                refused(r)?;
                Ok(r.hold_fraction)
            });
            let nonincreasing = rep.as_ref().map_err(Clone::clone).and_then(|r| {
                refused(r)?;
                Ok(r.pairs
                    .iter()
                    .map(|q| q.rate - q.tol)
                    .fold(f64::NEG_INFINITY, f64::max))
            });
            vec![
                lower("monotonicity.psi_hold_fraction", fine.label(), 0.99, hold),
                upper(
                    "monotonicity.psi_nonincreasing",
                    fine.label(),
                    0.0,
                    nonincreasing,
                ),
            ]
        }));
    }

    let curve = RunSpec::new(
        Scenario::GraphCurve {
            eps: 0.3,
            resolution: 64,
        },
        Until::Time(0.5),
        100,
    );
    let long = RunSpec::new(graph(0.1, 0.1, 16), Until::Time(5.0), 1000);
    for r in [curve, fine, long] {
        p.need(&r);
        p.groups.push(Box::new(move |ctx| {
            vec![upper(
                "monotonicity.max_principle",
                r.label(),
                1e-8,
                Ok(min_cos_drop(ctx.trace(&r))),
            )]
        }));
    }

    for (r, n) in [(circle_ref(c), 1), (clifford_ref(c), 2)] {
        p.need(&r);
        p.groups.push(Box::new(move |ctx| {
            let tr = ctx.trace(&r);
            let t_sing = singular_time(tr);
            let spec = t_sing.and_then(|t| {
                let x0 = &tr.singularity_report.as_ref().expect("reliable T").x0;
                KernelSpec::new(x0, t, None)
            });
            // Phi at the singular point is constant along a self-similar
            // flow; check it at the start and half way.
            let states = [&tr.snapshots[0], &tr.snapshots[tr.snapshots.len() / 2]];
            let phis = spec.as_ref().map_err(Clone::clone).and_then(|spec| {
                states
                    .iter()
                    .map(|s| {
                        let tau = spec.reference_time - s.t;
                        let r0 = (1.0 - 2.0 * s.t).sqrt();
                        let integrand = if n == 1 {
                            Integrand::CircleDensity {
                                radius: r0,
                                tau,
                                offset: 0.0,
                            }
                        } else {
                            Integrand::CliffordDensity { radius: r0, tau }
                        };
                        Ok((
                            gaussian_density(s, spec)?,
                            oracle_quadrature(&integrand, 2)?,
                        ))
                    })
                    .collect::<Result<Vec<_>>>()
            });
            let err = phis.as_ref().map_err(Clone::clone).map(|v| {
                v.iter()
                    .map(|(phi, o)| (phi / o - 1.0).abs())
                    .fold(0.0, f64::max)
            });
            let min = phis
                .as_ref()
                .map_err(Clone::clone)
                .map(|v| v.iter().map(|x| x.0).fold(f64::INFINITY, f64::min));
            let refusal = spec.and_then(|spec| {
                let rep = psi_monotonicity_report(tr, &spec, 0.0)?;
                Ok(rep.refusals as f64 / rep.samples.len() as f64)
            });
            let oracle = if n == 1 {
                "oracle_quadrature:circle_density"
            } else {
                "oracle_quadrature:clifford_density"
            };
            vec![
                outcome(
                    "monotonicity.gaussian_density",
                    r.label(),
                    Sense::Upper,
                    1e-2,
                    err,
                    Some(oracle),
                ),
                outcome(
                    "monotonicity.density_exceeds_one",
                    r.label(),
                    Sense::Lower,
                    1.1,
                    min,
                    Some(oracle),
                ),
                lower("monotonicity.psi_refusal", r.label(), 1.0, refusal),
            ]
        }));
    }

    let circle_var = RunSpec::new(circle(1.0, 128), Until::Time(0.05), 10);
    let clifford_var = RunSpec::new(clifford(1.0, 64), Until::Time(0.02), 20);
    let flat_var = RunSpec::new(graph(0.0, 0.0, 16), Until::Time(0.02), 1);
    let cases: [(RunSpec, Vec<f64>, Option<f64>, f64); 3] = [
        (circle_var, vec![0.0, 0.0], None, 1e-2),
        (clifford_var, vec![1.0, 0.0, 0.0, 0.0], Some(0.6), 1e-2),
        (flat_var, vec![0.3, 0.0, 0.0, 0.0], Some(0.7), 1e-9),
    ];
    for (r, center, cutoff, bound) in cases {
        p.need(&r);
        p.groups.push(Box::new(move |ctx| {
            let v = KernelSpec::new(&center, 1.0, cutoff)
                .and_then(|spec| first_variation_residual(ctx.trace(&r), &spec));
            vec![upper("monotonicity.first_variation", r.label(), bound, v)]
        }));
    }

    p.groups.push(Box::new(|_| {
        [(1, PI.sqrt() / 2.0), (2, 1.0)]
            .iter()
            .map(|&(n, exact)| {
                let v = oracle_quadrature(&Integrand::CConstant { n }, 2)
                    .map(|o| (c_constant(n) - o).abs().max((o - exact).abs()));
                outcome(
                    "monotonicity.c_constant",
                    format!("n = {n}"),
                    Sense::Upper,
                    1e-8,
                    v,
                    Some("oracle_quadrature:c_constant"),
                )
            })
            .collect()
    }));

    let dense = clifford_dense(c);
    p.need(&dense);
    p.groups.push(Box::new(move |ctx| {
        let rep = volume_density_bound(ctx.trace(&dense), 1.0, &[1.0, 2.0, 4.0, 8.0]);
        let spread = rep.as_ref().map_err(Clone::clone).map(|r| r.spread);
        // the flow is self-similar, so the ratios agree once the scaled
        // surface has passed through the ball
        let agree = rep.map(|r| {
            let v: Vec<f64> = r
                .rows
                .iter()
                .filter(|x| x.lambda >= 2.0)
                .map(|x| x.sup_ratio)
                .collect();
            let max = v.iter().cloned().fold(0.0, f64::max);
            let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
            max / min - 1.0
        });
        vec![
            upper(
                "monotonicity.volume_density_spread",
                dense.label(),
                DENSITY_SPREAD_BOUND,
                spread,
            ),
            upper(
                "monotonicity.volume_density_self_similar",
                dense.label(),
                0.05,
                agree,
            ),
        ]
    }));
}

/// Largest relative deviation of each rescaled factor radius from 1.
fn unit_shrinker_error(seq: &[RescaledCloud]) -> f64 {
    let mut worst: f64 = 0.0;
    for c in seq {
        for p in &c.points {
            for k in 0..c.n {
                worst = worst.max((p[k].hypot(p[c.n + k]) - 1.0).abs());
            }
        }
    }
    worst
}

fn rescaling(p: &mut Plan, c: &VerifyConfig) {
    for (fine, coarse) in [
        (circle_ref(c), circle_half(c)),
        (clifford_ref(c), clifford_half(c)),
    ] {
        p.need(&fine);
        p.need(&coarse);
        p.groups.push(Box::new(move |ctx| {
            let seq = time_rescale(ctx.trace(&fine));
            let coarse_seq = time_rescale(ctx.trace(&coarse));
            let on = |f: &dyn Fn(&[RescaledCloud]) -> Result<f64>| {
                seq.as_ref().map_err(Clone::clone).and_then(|s| f(s))
            };
            let theta = |s: &Result<Vec<RescaledCloud>>| {
                s.as_ref()
                    .map_err(Clone::clone)
                    .and_then(|s| rescaled_theta_identity(s, Stencil::Central2))
            };
            let (th_coarse, th_fine) = (theta(&coarse_seq), theta(&seq));
            let order = match (&th_coarse, &th_fine) {
                (Ok(a), Ok(b)) => Ok((a / b - 4.0).abs()),
                (Err(e), _) | (_, Err(e)) => Err(e.clone()),
            };
            vec![
                outcome(
                    "rescaling.self_shrinker",
                    fine.label(),
                    Sense::Upper,
                    1e-3,
                    on(&|s| Ok(s.iter().map(self_shrinker_residual).fold(0.0, f64::max))),
                    Some("H + X^perp = 0 on shrinkers"),
                ),
                upper(
                    "rescaling.flow_residual",
                    fine.label(),
                    1e-3,
                    on(&rescaled_flow_residual),
                ),
                outcome(
                    "rescaling.unit_shrinker",
                    fine.label(),
                    Sense::Upper,
                    1e-3,
                    on(&|s| Ok(unit_shrinker_error(s))),
                    Some("self-similarity"),
                ),
                upper(
                    "rescaling.scaling_identity",
                    fine.label(),
                    1e-10,
                    on(&|s| {
                        s.iter()
                            .map(|c| scaling_identity_defect(c, Stencil::Central4))
                            .try_fold(0.0, |a: f64, b| Ok(a.max(b?)))
                    }),
                ),
                upper("rescaling.theta_identity", coarse.label(), 1e-2, th_coarse),
                outcome(
                    "rescaling.theta_identity_order",
                    format!("{} -> {}", coarse.label(), fine.label()),
                    Sense::Upper,
                    0.5,
                    order,
                    Some("|ratio - 4| for a second-order stencil"),
                ),
            ]
        }));
    }

    let r = circle_ref(c);
    p.groups.push(Box::new(move |ctx| {
        // lambda = 2 at t = -1 reaches back to T - 1/4, where r = sqrt(1/2)
        let v = lambda_rescale(ctx.trace(&r), 2.0, -1.0).map(|cl| {
            cl.points
                .iter()
                .map(|p| (norm(p) - 2f64.sqrt()).abs() / 2f64.sqrt())
                .fold(0.0, f64::max)
        });
        vec![outcome(
            "rescaling.lambda_rescale",
            r.label(),
            Sense::Upper,
            1e-3,
            v,
            Some("radius 2 sqrt(1 - 2 (T - 1/4)) = sqrt 2"),
        )]
    }));
}

fn pair_cloud(specs: &[PlaneSpec]) -> Result<RescaledCloud> {
    plane_union_cloud(2, specs, 1.0, 100, 100)
}

/// Balls centered off the grid cut cells along their boundary; the
/// relative error of the ratio is about the cell size over the radius.
fn fine_cloud(specs: &[PlaneSpec]) -> Result<RescaledCloud> {
    plane_union_cloud(2, specs, 1.0, 400, 400)
}

/// Largest principal angle between a true plane and its nearest fitted one.
fn recovery_error(cluster: &PlaneCluster, truth: &[PlaneSpec]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for t in truth {
        let e = orthonormalize(&t.basis, cluster.n)?;
        let best = cluster
            .planes
            .iter()
            .map(|p| principal_angle(&e, &p.basis_v4(), cluster.n))
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(best);
    }
    Ok(worst)
}

fn max_drop(v: &[f64]) -> f64 {
    v.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max)
}

fn tangent_cone(p: &mut Plan) {
    for (name, c) in [("lagrangian_pair(cos = 0.8)", 0.8), ("complex_pair", 1.0)] {
        p.groups.push(Box::new(move |ctx| {
            let params = FitParams {
                seed: ctx.config.seed,
                ..FitParams::default()
            };
            let truth = witness_plane_pair(c);
            let cloud = truth
                .as_ref()
                .map_err(Clone::clone)
                .and_then(|t| pair_cloud(t));
            let fit = cloud
                .as_ref()
                .map_err(Clone::clone)
                .and_then(|c| fit_planes(c, &params));
            let f = |g: &dyn Fn(&PlaneCluster) -> Result<f64>| {
                fit.as_ref().map_err(Clone::clone).and_then(g)
            };
            let witness = f(&|k| complex_structure_witness(k, 1e-6).map(|w| w.max_residual));
            let oscillation = cloud
                .as_ref()
                .map_err(Clone::clone)
                .and_then(|c| angle_constancy(c, &AngleParams::default()))
                .map(|a| a.oscillation);
            let flat = cloud
                .as_ref()
                .map_err(Clone::clone)
                .and_then(|c| flatness_check(c, 1.0, fit.as_ref().ok()))
                .map(|r| r.a_l2);
            vec![
                upper(
                    "tangent_cone.plane_count",
                    name,
                    0.0,
                    f(&|k| Ok((k.planes.len() as f64 - 2.0).abs())),
                ),
                upper(
                    "tangent_cone.principal_angle",
                    name,
                    1e-6,
                    f(&|k| recovery_error(k, truth.as_ref().map_err(Clone::clone)?)),
                ),
                upper(
                    "tangent_cone.multiplicity",
                    name,
                    0.0,
                    f(&|k| {
                        Ok(k.planes
                            .iter()
                            .map(|p| (p.multiplicity as f64 - 1.0).abs())
                            .fold(0.0, f64::max))
                    }),
                ),
                upper("tangent_cone.angle_oscillation", name, 1e-6, oscillation),
                outcome(
                    "tangent_cone.witness_residual",
                    name,
                    Sense::Upper,
                    1e-6,
                    witness,
                    Some("J* and J' built from the common angle"),
                ),
                upper("tangent_cone.flatness", name, 1e-12, flat),
            ]
        }));
    }

    p.groups.push(Box::new(|ctx| {
        let params = FitParams {
            seed: ctx.config.seed,
            ..FitParams::default()
        };
        let v = witness_plane_pair(1.0)
            .and_then(|t| plane_union_cloud(2, &t[..1], 1.0, 50, 50))
            .and_then(|one| one.union(&one))
            .and_then(|two| fit_planes(&two, &params))
            .and_then(|k| {
                if k.planes.len() != 1 {
                    return Err(Error::InvalidParameter(format!(
                        "{} planes fitted",
                        k.planes.len()
                    )));
                }
                Ok((k.planes[0].multiplicity as f64 - 2.0).abs())
            });
        vec![upper(
            "tangent_cone.multiplicity",
            "duplicated_plane",
            0.0,
            v,
        )]
    }));

    p.groups.push(Box::new(|ctx| {
        let params = FitParams {
            seed: ctx.config.seed,
            ..FitParams::default()
        };
        // planes from two different pairs carry different cos(theta)
        let v = witness_plane_pair(0.8)
            .and_then(|a| Ok((a, witness_plane_pair(0.5)?)))
            .and_then(|(a, b)| plane_union_cloud(2, &[a[0].clone(), b[1].clone()], 1.0, 40, 40))
            .and_then(|cl| fit_planes(&cl, &params))
            .map(|k| match complex_structure_witness(&k, 1e-3) {
                Err(Error::AngleMismatch(_)) => 1.0,
                _ => 0.0,
            });
        vec![lower(
            "tangent_cone.witness_refuses_mismatch",
            "mismatched_pair(0.8, 0.5)",
            1.0,
            v,
        )]
    }));

    p.groups.push(Box::new(|_| {
        // balls stay inside the unit discs the clouds are cut from
        let radii: Vec<f64> = (1..=9).map(|k| 0.1 * k as f64).collect();
        let line = |a: f64| PlaneSpec {
            basis: [[a.cos(), a.sin(), 0.0, 0.0], [0.0; 4]],
            theta: a,
        };
        let clouds: Vec<(&str, Result<RescaledCloud>)> = vec![
            (
                "complex_pair",
                witness_plane_pair(1.0).and_then(|t| fine_cloud(&t)),
            ),
            (
                "lagrangian_pair(cos = 0.8)",
                witness_plane_pair(0.8).and_then(|t| fine_cloud(&t)),
            ),
            (
                "line_pair",
                plane_union_cloud(1, &[line(0.0), line(1.0)], 1.0, 2000, 1),
            ),
        ];
        clouds
            .into_iter()
            .flat_map(|(name, cl)| {
                let cl = cl.as_ref().map_err(Clone::clone);
                let n = cl.as_ref().map(|c| c.n).unwrap_or(2);
                [vec![0.0; 2 * n], {
                    let mut x = vec![0.0; 2 * n];
                    x[0] = 0.05;
                    x
                }]
                .into_iter()
                .map(|xi| {
                    let v = cl
                        .clone()
                        .and_then(|c| density_ratio(c, &xi, &radii))
                        .map(|r| max_drop(&r));
                    upper(
                        "tangent_cone.density_monotone",
                        format!("{name} at {xi:?}"),
                        1e-3,
                        v,
                    )
                })
                .collect::<Vec<_>>()
            })
            .collect()
    }));
}

fn type_classification(p: &mut Plan, c: &VerifyConfig) {
    for (r, target) in [(circle_ref(c), 0.5), (clifford_ref(c), 1.0)] {
        p.need(&r);
        p.groups.push(Box::new(move |ctx| {
            let tr = ctx.trace(&r);
            let plateau = tr
                .singularity_report
                .as_ref()
                .ok_or(Error::NoSingularityReport)
                .and_then(|rep| {
                    let ind = &rep.type_indicator;
                    let (lo, hi) = (ind.len() / 10, ind.len() * 9 / 10);
                    if hi <= lo {
                        return Err(Error::NotEnoughSnapshots {
                            needed: 10,
                            have: ind.len(),
                        });
                    }
                    let s = plateau_stats(&ind[lo..hi]);
                    Ok(((s.max - target) / target)
                        .abs()
                        .max(((s.min - target) / target).abs()))
                });
            let class = classify_type(tr).and_then(|t| match t.classification {
                TypeClass::TypeI => Ok(t.oscillation),
                other => Err(Error::InvalidParameter(format!("classified as {other:?}"))),
            });
            vec![
                outcome(
                    "type_classification.plateau",
                    r.label(),
                    Sense::Upper,
                    0.02,
                    plateau,
                    Some("max|A|^2 = n / 2(T - t) for shrinking products of n circles"),
                ),
                upper(
                    "type_classification.type_i",
                    r.label(),
                    crate::flow::PLATEAU_OSCILLATION,
                    class,
                ),
            ]
        }));
    }
}
