use std::path::{Path, PathBuf};

use lagflow_core::blowup::{
    density_ratio, fit_planes, integral_decay_report, lambda_rescale, lambda_sequence,
    PlaneCluster, RescaledCloud,
};
use lagflow_core::flow::{self, classify_type, FlowState, FlowTrace};
use lagflow_core::mesh::Scenario;
use lagflow_core::monitors::{
    calibrate_psi_tolerance, kernel_integrals, psi_monotonicity_report, KernelSpec,
    WeightedSurface,
};
use lagflow_core::verify::{all_passed, run_suites, CheckResult, Status, SUITES};
use lagflow_core::Error;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{load_config, RunConfig};
use crate::formats::{
    create_dir, finite, save_trace, singularity_summary, write_csv, write_json, DecayCsvRow,
    DensityCsvRow, IndicatorRow, PsiRow, PsiSummary, Summary, TypeStats, DECAY_HEADER,
    DENSITY_HEADER, INDICATOR_HEADER, PSI_HEADER, TYPE_INDICATOR_FILE,
};
use crate::plot::{plot_csv, PlotKind};
use crate::{finish, load_trace, Exit, Failure, FORMAT_VERSION};

fn config_or_default(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => load_config(p),
        None => Ok(RunConfig::empty()),
    }
}

fn output_dir(out: Option<&Path>, config: &RunConfig, fallback: &str) -> PathBuf {
    out.map(Path::to_path_buf)
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(fallback))
}

/// Flow the configured scenario and write a trace directory.
pub fn cmd_run(config: &Path, out: Option<&Path>) -> Exit {
    finish(run(config, out))
}

fn run(config_path: &Path, out: Option<&Path>) -> Result<Exit, Failure> {
    let config = load_config(config_path)?;
    let scenario = config
        .scenario
        .clone()
        .ok_or_else(|| Failure::usage(format!("{}: no scenario given", config_path.display())))?;
    let dir = output_dir(out, &config, "lagflow_run");
    let controls = config.controls();
    let trace = flow::run(scenario.build()?, config.until, &controls)?;

    let psi = psi_outputs(&config, &scenario, &trace)?;
    let type_report = match trace.singularity_report {
        Some(_) => Some(classify_type(&trace)?),
        None => None,
    };
    let singularity = trace.singularity_report.as_ref().map(singularity_summary);
    let summary = Summary {
        format_version: FORMAT_VERSION,
        scenario,
        until: config.until,
        controls,
        termination: trace.termination,
        steps: trace.step_log.len(),
        final_time: trace.final_state().t,
        snapshot_count: trace.snapshots.len(),
        initial: trace.initial,
        max_lagrangian_residual: trace.max_lagrangian_residual,
        estimated_t: singularity.as_ref().and_then(|s| s.estimated_t),
        singularity,
        type_indicator: type_report.as_ref().map(TypeStats::from),
        psi: psi.iter().map(|(s, _)| s.clone()).collect(),
    };
    save_trace(&dir, &trace, &summary)?;
    if let Some(rep) = &trace.singularity_report {
        let rows: Vec<IndicatorRow> = rep
            .type_indicator
            .iter()
            .map(|&(t, indicator)| IndicatorRow {
                format_version: FORMAT_VERSION,
                t,
                indicator,
            })
            .collect();
        write_csv(&dir.join(TYPE_INDICATOR_FILE), &INDICATOR_HEADER, &rows)?;
    }
    for (s, rows) in &psi {
        write_csv(&dir.join(format!("psi_{}.csv", s.kernel)), &PSI_HEADER, rows)?;
    }

    let t_text = summary
        .estimated_t
        .map_or_else(|| "none".to_string(), |t| format!("{t}"));
    println!(
        "{:?} after {} steps at t = {}; estimated T = {t_text}; wrote {}",
        summary.termination,
        summary.steps,
        summary.final_time,
        dir.display()
    );
    Ok(Exit::Ok)
}

/// The trace restricted to snapshots strictly before `t0`.
fn before(trace: &FlowTrace, t0: f64) -> FlowTrace {
    FlowTrace {
        controls: trace.controls.clone(),
        initial: trace.initial,
        snapshots: trace.snapshots.iter().filter(|s| s.t < t0).cloned().collect(),
        step_log: trace.step_log.clone(),
        max_lagrangian_residual: trace.max_lagrangian_residual,
        termination: trace.termination,
        singularity_report: trace.singularity_report.clone(),
    }
}

fn psi_row(state: &FlowState, spec: &KernelSpec) -> Result<PsiRow, Failure> {
    let tau = spec.tau(state.t)?;
    let surf = WeightedSurface::from_state(state);
    let phi = kernel_integrals(&surf, spec, tau, false)?.phi;
    let (psi, dissipation, refused) = match kernel_integrals(&surf, spec, tau, true) {
        Ok(k) => (Some(k.psi), Some(k.dissipation), false),
        Err(Error::WeightUndefined { .. }) => (None, None, true),
        Err(e) => return Err(e.into()),
    };
    Ok(PsiRow {
        format_version: FORMAT_VERSION,
        t: state.t,
        psi,
        phi: Some(phi),
        dissipation,
        refused,
    })
}

/// Per-kernel Psi samples, and the monotonicity statistics when extra
/// resolutions allow calibrating the tolerance.
fn psi_outputs(
    config: &RunConfig,
    scenario: &Scenario,
    trace: &FlowTrace,
) -> Result<Vec<(PsiSummary, Vec<PsiRow>)>, Failure> {
    if config.kernels.is_empty() {
        return Ok(Vec::new());
    }
    let controls = config.controls();
    let extra: Vec<FlowTrace> = config
        .resolutions
        .par_iter()
        .map(|&r| flow::run(scenario.with_resolution(r).build()?, config.until, &controls))
        .collect::<lagflow_core::Result<_>>()?;
    config
        .kernels
        .iter()
        .enumerate()
        .map(|(k, spec)| {
            let t0 = spec.reference_time;
            let main = before(trace, t0);
            let rows: Vec<PsiRow> = main
                .snapshots
                .par_iter()
                .map(|s| psi_row(s, spec))
                .collect::<Result<_, Failure>>()?;
            let mut summary = PsiSummary {
                kernel: k,
                center: spec.center.clone(),
                reference_time: t0,
                cutoff_radius: spec.cutoff_radius,
                snapshots: rows.len(),
                refusals: rows.iter().filter(|r| r.refused).count(),
                c_ref: None,
                hold_fraction: None,
                all_nonincreasing: None,
            };
            if !extra.is_empty() && main.snapshots.len() >= 2 {
                let cut: Vec<FlowTrace> = extra.iter().map(|t| before(t, t0)).collect();
                let refs: Vec<&FlowTrace> = std::iter::once(&main).chain(&cut).collect();
                match calibrate_psi_tolerance(&refs, spec) {
                    Ok(c_ref) => {
                        let rep = psi_monotonicity_report(&main, spec, c_ref)?;
                        summary.c_ref = Some(c_ref);
                        summary.hold_fraction = Some(rep.hold_fraction);
                        summary.all_nonincreasing = Some(rep.all_nonincreasing);
                    }
                    Err(Error::NotEnoughSnapshots { .. }) => {}
                    Err(e) => return Err(e.into()),
                }
            }
            Ok((summary, rows))
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct LambdaCloudFile<'a> {
    pub format_version: u32,
    pub lambda: f64,
    pub t: f64,
    pub cloud: &'a RescaledCloud,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanesFile {
    pub format_version: u32,
    /// Scale of the fitted cloud, the largest of the sequence.
    pub lambda: f64,
    pub t: f64,
    pub cluster: PlaneCluster,
}

/// Blow up a saved trace about its singular point and analyse the clouds.
pub fn cmd_blowup(
    trace_dir: &Path,
    config: Option<&Path>,
    lambda_max: Option<u32>,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Exit {
    finish(blowup(trace_dir, config, lambda_max, seed, out))
}

fn blowup(
    trace_dir: &Path,
    config: Option<&Path>,
    lambda_max: Option<u32>,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<Exit, Failure> {
    let mut config = config_or_default(config)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    let lambdas = match lambda_max {
        Some(k) if k > 20 => return Err(Failure::usage(format!("--lambda-max {k} exceeds 20"))),
        Some(k) => lambda_sequence(k),
        None => config.lambda_sequence.clone(),
    };
    let (summary, trace) = load_trace(trace_dir)?;
    match &trace.singularity_report {
        None => {
            return Err(Failure::missing(format!(
                "{}: trace has no singularity report (termination {:?})",
                trace_dir.display(),
                summary.termination
            )))
        }
        Some(r) if !r.estimated_t.is_finite() => {
            return Err(Failure::missing(format!(
                "{}: singular time could not be estimated",
                trace_dir.display()
            )))
        }
        Some(_) => {}
    }
    let b = &config.blowup;
    let dir = out.unwrap_or(trace_dir).join("blowup");
    create_dir(&dir)?;

    let clouds: Vec<RescaledCloud> = lambdas
        .par_iter()
        .map(|&l| lambda_rescale(&trace, l, b.time))
        .collect::<lagflow_core::Result<_>>()?;
    for (k, (l, c)) in lambdas.iter().zip(&clouds).enumerate() {
        let file = LambdaCloudFile {
            format_version: FORMAT_VERSION,
            lambda: *l,
            t: b.time,
            cloud: c,
        };
        write_json(&dir.join(format!("lambda_{k}.json")), &file)?;
    }

    let (k_fit, _) = lambdas
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (k, &l)| if l > acc.1 { (k, l) } else { acc });
    let cluster = fit_planes(&clouds[k_fit], &config.fit_params())?;
    let planes = PlanesFile {
        format_version: FORMAT_VERSION,
        lambda: lambdas[k_fit],
        t: b.time,
        cluster,
    };
    write_json(&dir.join("planes.json"), &planes)?;

    let decay = integral_decay_report(&trace, &lambdas, b.radius, b.window[0], b.window[1])?;
    let rows: Vec<DecayCsvRow> = decay
        .rows
        .iter()
        .map(|r| DecayCsvRow {
            format_version: FORMAT_VERSION,
            lambda: r.lambda,
            covered: r.covered,
            grad_cos_sq: finite(r.grad_cos_sq),
            mean_curvature_sq: finite(r.mean_curvature_sq),
            normal_position_sq: finite(r.normal_position_sq),
            samples: r.samples,
        })
        .collect();
    write_csv(&dir.join("decay.csv"), &DECAY_HEADER, &rows)?;

    let origin = vec![0.0; 2 * trace.n()];
    let mut rows = Vec::new();
    for (l, c) in lambdas.iter().zip(&clouds) {
        for &r in &b.density_radii {
            let ratio = match density_ratio(c, &origin, &[r]) {
                Ok(v) => Some(v[0]),
                Err(Error::EmptyBall) => None,
                Err(e) => return Err(e.into()),
            };
            rows.push(DensityCsvRow {
                format_version: FORMAT_VERSION,
                lambda: *l,
                radius: r,
                ratio,
            });
        }
    }
    write_csv(&dir.join("density.csv"), &DENSITY_HEADER, &rows)?;

    println!(
        "{} clouds; {} plane(s), residual {:.3e}, unassigned {:.3}; wrote {}",
        clouds.len(),
        planes.cluster.planes.len(),
        planes.cluster.residual,
        planes.cluster.unassigned_fraction,
        dir.display()
    );
    Ok(Exit::Ok)
}

/// Contents of report.json.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub format_version: u32,
    pub suites: Vec<String>,
    pub seed: u64,
    pub passed: bool,
    pub results: Vec<CheckResult>,
}

/// Run verification suites (all of them when `suites` is empty).
pub fn cmd_verify(
    config: Option<&Path>,
    suites: &[String],
    out: Option<&Path>,
    seed: Option<u64>,
) -> Exit {
    finish(verify(config, suites, out, seed))
}

fn verify(
    config: Option<&Path>,
    suites: &[String],
    out: Option<&Path>,
    seed: Option<u64>,
) -> Result<Exit, Failure> {
    let config = config_or_default(config)?;
    let mut vc = config.verify_config();
    if let Some(s) = seed {
        vc.seed = s;
    }
    let mut names: Vec<String> = Vec::new();
    let requested: Vec<String> = if suites.is_empty() {
        SUITES.iter().map(|s| s.to_string()).collect()
    } else {
        suites.to_vec()
    };
    for s in requested {
        if !names.contains(&s) {
            names.push(s);
        }
    }
    let results = run_suites(&names, &vc)?;
    let passed = all_passed(&results);
    let dir = output_dir(out, &config, ".");
    create_dir(&dir)?;
    let report = Report {
        format_version: FORMAT_VERSION,
        suites: names,
        seed: vc.seed,
        passed,
        results,
    };
    write_json(&dir.join("report.json"), &report)?;

    let count = |s: Status| report.results.iter().filter(|r| r.status == s).count();
    for r in report.results.iter().filter(|r| r.status == Status::Fail) {
        eprintln!(
            "FAIL {} [{}]: value {} vs bound {}{}",
            r.check,
            r.scenario,
            r.value.map_or_else(|| "none".into(), |v| format!("{v:.3e}")),
            r.bound,
            r.reason.as_ref().map_or_else(String::new, |m| format!(" ({m})"))
        );
    }
    println!(
        "{} checks: {} passed, {} failed, {} skipped; wrote {}",
        report.results.len(),
        count(Status::Pass),
        count(Status::Fail),
        count(Status::Skipped),
        dir.join("report.json").display()
    );
    Ok(if passed { Exit::Ok } else { Exit::CheckFailure })
}

/// Render a CSV output as SVG beside it.
pub fn cmd_plot(kind: &str, csv: &Path) -> Exit {
    finish(plot(kind, csv))
}

fn plot(kind: &str, csv: &Path) -> Result<Exit, Failure> {
    let kind: PlotKind = kind.parse().map_err(Failure::usage)?;
    let out = plot_csv(csv, kind)?;
    println!("wrote {}", out.display());
    Ok(Exit::Ok)
}
