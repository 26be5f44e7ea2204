//! Mean curvature flow dF/dt = H by explicit time stepping.

mod analysis;
mod redistribute;

pub use analysis::{
    classify_type, cos_theta_reaction_residual, cos_theta_reaction_residual_on, estimate_x0,
    fit_singular_time, plateau_stats, theta_heat_residual, theta_heat_residual_on, PlateauStats,
    SingularTimeFit, TypeClass, TypeReport, PLATEAU_OSCILLATION,
};
pub use redistribute::redistribute_arclength;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{
    compute_geometry_with, lagrangian_residual, mean_curvature_field, step_geometry, GeometryCache,
    Immersion, Stencil, StepGeometry,
};
use crate::vector::{axpy, V4};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    Euler,
    /// Heun's method.
    #[default]
    Rk2,
}

/// Knobs of a flow run. Defaults: cfl 0.2, Heun, fourth-order stencil,
/// resolution budget 0.5, curvature cap 1e4.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowControls {
    pub cfl: f64,
    pub integrator: Integrator,
    pub stencil: Stencil,
    /// Stop once max|A| * h_min exceeds this.
    pub resolution_budget: f64,
    /// Stop once max|A|^2 exceeds this. Self-similar shrinkers keep
    /// max|A| * h_min constant, so the budget alone never fires for them.
    pub curvature_cap: f64,
    /// Keep every k-th step as a snapshot (the initial and final states are
    /// always kept).
    pub snapshot_stride: usize,
    pub max_steps: usize,
    /// Upper bound on dt on top of the adaptive rule.
    pub dt_max: Option<f64>,
    /// Arclength redistribution every k steps (curves only).
    pub redistribute_every: Option<usize>,
    /// Trailing fraction of the step log used to fit the singular time.
    pub fit_fraction: f64,
}

impl Default for FlowControls {
    fn default() -> Self {
        FlowControls {
            cfl: 0.2,
            integrator: Integrator::Rk2,
            stencil: Stencil::Central4,
            resolution_budget: 0.5,
            curvature_cap: 1e4,
            snapshot_stride: 100,
            max_steps: 2_000_000,
            dt_max: None,
            redistribute_every: None,
            fit_fraction: 0.2,
        }
    }
}

impl FlowControls {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return bad("cfl must lie in (0, 1]");
        }
        if !(self.resolution_budget > 0.0) || !(self.curvature_cap > 0.0) {
            return bad("resolution budget and curvature cap must be positive");
        }
        if self.snapshot_stride == 0 {
            return bad("snapshot stride must be at least 1");
        }
        if let Some(d) = self.dt_max {
            if !(d > 0.0) {
                return bad("dt_max must be positive");
            }
        }
        if self.redistribute_every == Some(0) {
            return bad("redistribution period must be at least 1");
        }
        if !(self.fit_fraction > 0.0 && self.fit_fraction <= 1.0) {
            return bad("fit fraction must lie in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    pub t: f64,
    pub immersion: Immersion,
    pub geometry: GeometryCache,
}

impl FlowState {
    pub fn new(immersion: Immersion, t: f64, stencil: Stencil) -> Result<Self> {
        let geometry = compute_geometry_with(&immersion, stencil, None)?;
        Ok(FlowState {
            t,
            immersion,
            geometry,
        })
    }

    pub fn diagnostics(&self, dt: f64) -> StepRecord {
        StepRecord {
            t: self.t,
            dt,
            volume: self.geometry.volume(),
            max_a_sq: self.geometry.max_norm_a_sq(),
            min_cos_theta: self.geometry.min_cos_theta(),
            max_h: self.geometry.max_mean_curvature(),
        }
    }
}

/// Diagnostics of the state reached by one accepted step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub dt: f64,
    pub volume: f64,
    pub max_a_sq: f64,
    pub min_cos_theta: f64,
    pub max_h: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ReachedTime,
    ResolutionExhausted,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Until {
    Time(f64),
    Singularity(SingularityTag),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingularityTag {
    Singularity,
}

impl Until {
    pub const SINGULARITY: Until = Until::Singularity(SingularityTag::Singularity);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularityReport {
    pub estimated_t: f64,
    pub t_reliable: bool,
    /// Why the estimate is unreliable, if it is.
    pub fit_note: Option<String>,
    /// RMS deviation of 1/max|A|^2 from the fitted line, relative to its mean.
    pub fit_residual: f64,
    pub x0: Vec<f64>,
    /// (t, (T - t) max|A|^2) for the initial state and every step before T.
    pub type_indicator: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowTrace {
    pub controls: FlowControls,
    pub initial: StepRecord,
    pub snapshots: Vec<FlowState>,
    pub step_log: Vec<StepRecord>,
    /// Largest Lagrangian residual over the snapshots.
    pub max_lagrangian_residual: f64,
    pub termination: Termination,
    pub singularity_report: Option<SingularityReport>,
}

impl FlowTrace {
    pub fn final_state(&self) -> &FlowState {
        self.snapshots
            .last()
            .expect("trace always holds the initial state")
    }

    pub fn n(&self) -> usize {
        self.snapshots[0].immersion.n()
    }

    /// Initial record followed by the step log.
    pub fn records(&self) -> impl Iterator<Item = &StepRecord> {
        std::iter::once(&self.initial).chain(self.step_log.iter())
    }
}

/// dt = cfl * min(h_min^2 / 4, 1 / (2 max|A|^2)).
pub fn adaptive_dt(geo: &GeometryCache, cfl: f64) -> Result<f64> {
    if !(cfl > 0.0 && cfl <= 1.0) {
        return Err(Error::InvalidParameter(format!("cfl {cfl} outside (0, 1]")));
    }
    let a = geo.max_norm_a_sq();
    if !a.is_finite() {
        return Err(Error::NonFinite("max |A|^2".into()));
    }
    let h = geo.h_min();
    let diffusive = h * h / 4.0;
    let curvature = if a > 0.0 { 0.5 / a } else { f64::INFINITY };
    Ok(cfl * diffusive.min(curvature))
}

fn advance(im: &Immersion, vel: &[V4], dt: f64) -> Result<Immersion> {
    let p = im
        .positions()
        .iter()
        .zip(vel)
        .map(|(x, h)| axpy(x, dt, h))
        .collect();
    im.with_positions(p)
}

/// One explicit step of dF/dt = H; the angle branch is kept continuous with
/// the previous state.
pub fn step(state: &FlowState, dt: f64, integrator: Integrator) -> Result<FlowState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "dt must be positive, got {dt}"
        )));
    }
    let stencil = state.geometry.stencil;
    let k1: Vec<V4> = state
        .geometry
        .vertices
        .iter()
        .map(|v| v.mean_curvature)
        .collect();
    let next = match integrator {
        Integrator::Euler => advance(&state.immersion, &k1, dt)?,
        Integrator::Rk2 => {
            let mid = advance(&state.immersion, &k1, dt)?;
            let k2 = mean_curvature_field(&mid, stencil)?;
            let avg: Vec<V4> = k1
                .iter()
                .zip(&k2)
                .map(|(a, b)| axpy(&crate::vector::scale(a, 0.5), 0.5, b))
                .collect();
            advance(&state.immersion, &avg, dt)?
        }
    };
    let geometry = compute_geometry_with(&next, stencil, Some(&state.geometry))?;
    Ok(FlowState {
        t: state.t + dt,
        immersion: next,
        geometry,
    })
}

fn exhausted(g: &StepGeometry, c: &FlowControls) -> bool {
    let a = g.max_norm_a_sq;
    a.sqrt() * g.h_min > c.resolution_budget || a > c.curvature_cap
}

fn step_dt(g: &StepGeometry, cfl: f64) -> Result<f64> {
    if !g.max_norm_a_sq.is_finite() {
        return Err(Error::NonFinite("max |A|^2".into()));
    }
    let curvature = if g.max_norm_a_sq > 0.0 {
        0.5 / g.max_norm_a_sq
    } else {
        f64::INFINITY
    };
    Ok(cfl * (g.h_min * g.h_min / 4.0).min(curvature))
}

fn record(t: f64, dt: f64, g: &StepGeometry) -> StepRecord {
    StepRecord {
        t,
        dt,
        volume: g.volume,
        max_a_sq: g.max_norm_a_sq,
        min_cos_theta: g.min_cos_theta,
        max_h: g.max_mean_curvature,
    }
}

/// Flow from time 0 until `until` or until the grid can no longer resolve
/// the curvature.
///
/// Steps use the reduced [`StepGeometry`]; full geometry is computed only
/// for the states kept as snapshots.
pub fn run(im: Immersion, until: Until, controls: &FlowControls) -> Result<FlowTrace> {
    controls.validate()?;
    if controls.redistribute_every.is_some() && im.n() != 1 {
        return Err(Error::InvalidParameter(
            "arclength redistribution is only defined for curves".into(),
        ));
    }
    let t_end = match until {
        Until::Time(t) if !t.is_finite() => {
            return Err(Error::InvalidParameter("until must be finite".into()))
        }
        Until::Time(t) => Some(t),
        Until::Singularity(_) => None,
    };
    let stencil = controls.stencil;
    let first = FlowState::new(im, 0.0, stencil)?;
    let mut lag = lagrangian_residual(&first.immersion)?;
    let mut im = first.immersion.clone();
    let mut sg = step_geometry(&im, stencil)?;
    let initial = record(0.0, 0.0, &sg);
    let mut t = 0.0;
    let mut snapshots = vec![first];
    let mut log = Vec::new();
    let mut termination = Termination::ReachedTime;
    let mut steps = 0usize;

    let mut keep = |im: &Immersion, t: f64, snaps: &mut Vec<FlowState>| -> Result<()> {
        let prev = &snaps.last().expect("initial snapshot").geometry;
        let geometry = compute_geometry_with(im, stencil, Some(prev))?;
        lag = lag.max(lagrangian_residual(im)?);
        snaps.push(FlowState {
            t,
            immersion: im.clone(),
            geometry,
        });
        Ok(())
    };

    loop {
        if exhausted(&sg, controls) {
            termination = Termination::ResolutionExhausted;
            break;
        }
        if let Some(te) = t_end {
            if t >= te {
                break;
            }
        }
        if steps >= controls.max_steps {
            return Err(Error::StepLimit(controls.max_steps));
        }
        let mut dt = step_dt(&sg, controls.cfl)?;
        if let Some(m) = controls.dt_max {
            dt = dt.min(m);
        }
        let mut t_next = t + dt;
        if let Some(te) = t_end {
            if t_next >= te {
                dt = te - t;
                t_next = te;
            }
        }
        im = match controls.integrator {
            Integrator::Euler => advance(&im, &sg.mean_curvature, dt)?,
            Integrator::Rk2 => {
                let mid = advance(&im, &sg.mean_curvature, dt)?;
                let k2 = mean_curvature_field(&mid, stencil)?;
                let avg: Vec<V4> = sg
                    .mean_curvature
                    .iter()
                    .zip(&k2)
                    .map(|(a, b)| axpy(&crate::vector::scale(a, 0.5), 0.5, b))
                    .collect();
                advance(&im, &avg, dt)?
            }
        };
        steps += 1;
        if let Some(k) = controls.redistribute_every {
            if steps % k == 0 {
                im = redistribute_arclength(&im)?;
            }
        }
        sg = step_geometry(&im, stencil)?;
        t = t_next;
        log.push(record(t, dt, &sg));
        if steps % controls.snapshot_stride == 0 {
            keep(&im, t, &mut snapshots)?;
        }
    }
    if snapshots.last().map(|s| s.t) != Some(t) {
        keep(&im, t, &mut snapshots)?;
    }

    let mut trace = FlowTrace {
        controls: controls.clone(),
        initial,
        snapshots,
        step_log: log,
        max_lagrangian_residual: lag,
        termination,
        singularity_report: None,
    };
    if termination == Termination::ResolutionExhausted {
        trace.singularity_report = Some(analysis::singularity_report(&trace));
    }
    Ok(trace)
}
