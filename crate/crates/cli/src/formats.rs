//! On-disk layout of a trace directory and the record types of every file
//! the binary writes. Floats are written in shortest round-trip form, so a
//! reloaded trace equals the one that was saved.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use lagflow_core::flow::{
    FlowControls, FlowState, FlowTrace, SingularityReport, StepRecord, Termination, TypeClass,
    TypeReport, Until,
};
use lagflow_core::mesh::{compute_geometry_with, AmbientSpace, Immersion, Scenario};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Failure, FORMAT_VERSION};

pub const SUMMARY_FILE: &str = "summary.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const TYPE_INDICATOR_FILE: &str = "type_indicator.csv";

/// NaN and infinities become null.
pub fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRow {
    pub format_version: u32,
    pub t: f64,
    pub dt: f64,
    pub volume: f64,
    #[serde(rename = "max_A_sq")]
    pub max_a_sq: f64,
    pub min_cos_theta: f64,
    #[serde(rename = "max_H")]
    pub max_h: f64,
}

impl From<&StepRecord> for StepRow {
    fn from(r: &StepRecord) -> Self {
        StepRow {
            format_version: FORMAT_VERSION,
            t: r.t,
            dt: r.dt,
            volume: r.volume,
            max_a_sq: r.max_a_sq,
            min_cos_theta: r.min_cos_theta,
            max_h: r.max_h,
        }
    }
}

impl From<&StepRow> for StepRecord {
    fn from(r: &StepRow) -> Self {
        StepRecord {
            t: r.t,
            dt: r.dt,
            volume: r.volume,
            max_a_sq: r.max_a_sq,
            min_cos_theta: r.min_cos_theta,
            max_h: r.max_h,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndicatorRow {
    pub format_version: u32,
    pub t: f64,
    pub indicator: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsiRow {
    pub format_version: u32,
    pub t: f64,
    /// Empty when the weight is undefined at this snapshot.
    pub psi: Option<f64>,
    pub phi: Option<f64>,
    pub dissipation: Option<f64>,
    pub refused: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayCsvRow {
    pub format_version: u32,
    pub lambda: f64,
    pub covered: bool,
    pub grad_cos_sq: Option<f64>,
    pub mean_curvature_sq: Option<f64>,
    pub normal_position_sq: Option<f64>,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityCsvRow {
    pub format_version: u32,
    pub lambda: f64,
    pub radius: f64,
    /// Empty when the ball holds no sample.
    pub ratio: Option<f64>,
}

/// One flow snapshot. Positions are the row-major grid samples, 2n
/// coordinates each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotFile {
    pub format_version: u32,
    pub index: usize,
    pub t: f64,
    pub complex_dimension: usize,
    pub periods: Option<Vec<f64>>,
    pub grid_shape: Vec<usize>,
    pub winding: [[i64; 2]; 2],
    pub positions: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingularitySummary {
    #[serde(rename = "estimated_T")]
    pub estimated_t: Option<f64>,
    #[serde(rename = "T_reliable")]
    pub t_reliable: bool,
    pub fit_note: Option<String>,
    pub fit_residual: Option<f64>,
    #[serde(rename = "X0")]
    pub x0: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeStats {
    pub classification: TypeClass,
    pub plateau: Option<f64>,
    pub oscillation: Option<f64>,
    pub sup: Option<f64>,
    pub window: [Option<f64>; 2],
    pub samples: usize,
}

impl From<&TypeReport> for TypeStats {
    fn from(r: &TypeReport) -> Self {
        TypeStats {
            classification: r.classification,
            plateau: finite(r.plateau),
            oscillation: finite(r.oscillation),
            sup: finite(r.sup),
            window: [finite(r.window.0), finite(r.window.1)],
            samples: r.indicator.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsiSummary {
    /// Position of the kernel in the config, also the suffix of its CSV.
    pub kernel: usize,
    pub center: Vec<f64>,
    pub reference_time: f64,
    pub cutoff_radius: Option<f64>,
    /// Snapshots before the reference time.
    pub snapshots: usize,
    pub refusals: usize,
    /// Present only when extra resolutions were given for calibration.
    pub c_ref: Option<f64>,
    pub hold_fraction: Option<f64>,
    pub all_nonincreasing: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub format_version: u32,
    pub scenario: Scenario,
    pub until: Until,
    pub controls: FlowControls,
    pub termination: Termination,
    pub steps: usize,
    pub final_time: f64,
    pub snapshot_count: usize,
    /// Diagnostics of the initial state; trace.csv holds the accepted steps.
    pub initial: StepRecord,
    pub max_lagrangian_residual: f64,
    /// Copy of singularity.estimated_T for quick access.
    #[serde(rename = "estimated_T")]
    pub estimated_t: Option<f64>,
    pub singularity: Option<SingularitySummary>,
    pub type_indicator: Option<TypeStats>,
    pub psi: Vec<PsiSummary>,
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::usage(format!("{}: {e}", path.display()))
}

pub fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(|e| io_failure(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let file = File::create(path).map_err(|e| io_failure(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_failure(path, e))?;
    w.write_all(b"\n").map_err(|e| io_failure(path, e))?;
    w.flush().map_err(|e| io_failure(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let file = File::open(path).map_err(|e| io_failure(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| io_failure(path, e))
}

/// Write rows with a header line even when there are none.
pub fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), Failure> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| io_failure(path, e))?;
    w.write_record(header).map_err(|e| io_failure(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| io_failure(path, e))?;
    }
    w.flush().map_err(|e| io_failure(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, Failure> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_failure(path, e))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| io_failure(path, e))
}

pub const STEP_HEADER: [&str; 7] = [
    "format_version",
    "t",
    "dt",
    "volume",
    "max_A_sq",
    "min_cos_theta",
    "max_H",
];
pub const INDICATOR_HEADER: [&str; 3] = ["format_version", "t", "indicator"];
pub const PSI_HEADER: [&str; 6] = ["format_version", "t", "psi", "phi", "dissipation", "refused"];
pub const DECAY_HEADER: [&str; 7] = [
    "format_version",
    "lambda",
    "covered",
    "grad_cos_sq",
    "mean_curvature_sq",
    "normal_position_sq",
    "samples",
];
pub const DENSITY_HEADER: [&str; 4] = ["format_version", "lambda", "radius", "ratio"];

pub fn snapshot_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(SNAPSHOT_DIR).join(format!("snapshot_{index:05}.json"))
}

pub fn snapshot_file(index: usize, state: &FlowState) -> SnapshotFile {
    let im = &state.immersion;
    SnapshotFile {
        format_version: FORMAT_VERSION,
        index,
        t: state.t,
        complex_dimension: im.n(),
        periods: im.ambient().periods.clone(),
        grid_shape: im.grid_shape(),
        winding: im.winding(),
        positions: im.flat_positions(),
    }
}

/// The part of a singularity report that is stored; the indicator history
/// is rebuilt from the step log on load.
pub fn singularity_summary(r: &SingularityReport) -> SingularitySummary {
    SingularitySummary {
        estimated_t: finite(r.estimated_t),
        t_reliable: r.t_reliable,
        fit_note: r.fit_note.clone(),
        fit_residual: finite(r.fit_residual),
        x0: r.x0.clone(),
    }
}

/// (T - t) max|A|^2 over the initial state and every step before T.
pub fn indicator_history(initial: &StepRecord, log: &[StepRecord], t_sing: f64) -> Vec<(f64, f64)> {
    if !t_sing.is_finite() {
        return Vec::new();
    }
    std::iter::once(initial)
        .chain(log)
        .filter(|r| r.t < t_sing)
        .map(|r| (r.t, (t_sing - r.t) * r.max_a_sq))
        .collect()
}

/// Write summary.json, trace.csv and one JSON file per snapshot.
pub fn save_trace(dir: &Path, trace: &FlowTrace, summary: &Summary) -> Result<(), Failure> {
    create_dir(&dir.join(SNAPSHOT_DIR))?;
    let rows: Vec<StepRow> = trace.step_log.iter().map(StepRow::from).collect();
    write_csv(&dir.join(TRACE_FILE), &STEP_HEADER, &rows)?;
    for (k, s) in trace.snapshots.iter().enumerate() {
        write_json(&snapshot_path(dir, k), &snapshot_file(k, s))?;
    }
    write_json(&dir.join(SUMMARY_FILE), summary)
}

fn check_version(path: &Path, v: u32) -> Result<(), Failure> {
    if v != FORMAT_VERSION {
        return Err(Failure::usage(format!(
            "{}: format_version {v} is not supported (expected {FORMAT_VERSION})",
            path.display()
        )));
    }
    Ok(())
}

/// Rebuild a trace from its directory. Snapshot geometry is recomputed in
/// order, each against the previous one for the angle branch, as during the
/// flow.
pub fn load_trace(dir: &Path) -> Result<(Summary, FlowTrace), Failure> {
    let summary_path = dir.join(SUMMARY_FILE);
    let summary: Summary = read_json(&summary_path)?;
    check_version(&summary_path, summary.format_version)?;
    let trace_path = dir.join(TRACE_FILE);
    let rows: Vec<StepRow> = read_csv(&trace_path)?;
    for r in &rows {
        check_version(&trace_path, r.format_version)?;
    }
    let step_log: Vec<StepRecord> = rows.iter().map(StepRecord::from).collect();
    let stencil = summary.controls.stencil;
    let mut snapshots: Vec<FlowState> = Vec::with_capacity(summary.snapshot_count);
    for k in 0..summary.snapshot_count {
        let path = snapshot_path(dir, k);
        let f: SnapshotFile = read_json(&path)?;
        check_version(&path, f.format_version)?;
        if f.index != k {
            return Err(Failure::usage(format!(
                "{}: index {} out of order",
                path.display(),
                f.index
            )));
        }
        let ambient = AmbientSpace {
            complex_dimension: f.complex_dimension,
            periods: f.periods,
        };
        let bad = |e: lagflow_core::Error| Failure::usage(format!("{}: {e}", path.display()));
        let im = Immersion::from_flat(ambient, &f.grid_shape, &f.positions, f.winding)
            .map_err(bad)?;
        let geometry = compute_geometry_with(&im, stencil, snapshots.last().map(|s| &s.geometry))
            .map_err(bad)?;
        snapshots.push(FlowState {
            t: f.t,
            immersion: im,
            geometry,
        });
    }
    if snapshots.is_empty() {
        return Err(Failure::usage(format!("{}: no snapshots", dir.display())));
    }
    let singularity_report = summary.singularity.as_ref().map(|s| {
        let t = s.estimated_t.unwrap_or(f64::NAN);
        SingularityReport {
            estimated_t: t,
            t_reliable: s.t_reliable,
            fit_note: s.fit_note.clone(),
            fit_residual: s.fit_residual.unwrap_or(f64::NAN),
            x0: s.x0.clone(),
            type_indicator: indicator_history(&summary.initial, &step_log, t),
        }
    });
    let trace = FlowTrace {
        controls: summary.controls.clone(),
        initial: summary.initial,
        snapshots,
        step_log,
        max_lagrangian_residual: summary.max_lagrangian_residual,
        termination: summary.termination,
        singularity_report,
    };
    Ok((summary, trace))
}
