use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use lagflow_core::blowup::{lambda_sequence, FitParams};
use lagflow_core::flow::{FlowControls, Integrator, Until};
use lagflow_core::mesh::{Scenario, Stencil};
use lagflow_core::monitors::KernelSpec;
use lagflow_core::verify::{Resolutions, VerifyConfig};
use serde::{Deserialize, Serialize};

use crate::{Failure, FORMAT_VERSION};

/// Contents of a `--config` file. Every command reads the same schema and
/// ignores the sections it does not use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    /// Required by `run` only.
    #[serde(default)]
    pub scenario: Option<Scenario>,
    /// Further grid resolutions of the same scenario. They are flowed only to
    /// calibrate the Psi discretization tolerance.
    #[serde(default)]
    pub resolutions: Vec<usize>,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    #[serde(default = "default_until")]
    pub until: Until,
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
    /// Blow-up scales; `--lambda-max K` replaces them with 1, 2, ..., 2^K.
    #[serde(default = "default_lambdas")]
    pub lambda_sequence: Vec<f64>,
    #[serde(default)]
    pub kernels: Vec<KernelSpec>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Seed of every randomized step; `--seed` takes precedence.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub flow: FlowSection,
    #[serde(default)]
    pub blowup: BlowupSection,
    #[serde(default)]
    pub verify: VerifySection,
}

fn default_cfl() -> f64 {
    FlowControls::default().cfl
}

fn default_until() -> Until {
    Until::SINGULARITY
}

fn default_stride() -> usize {
    FlowControls::default().snapshot_stride
}

fn default_lambdas() -> Vec<f64> {
    lambda_sequence(3)
}

/// Flow knobs other than cfl and snapshot stride.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSection {
    pub integrator: Integrator,
    pub stencil: Stencil,
    pub resolution_budget: f64,
    pub curvature_cap: f64,
    pub max_steps: usize,
    pub dt_max: Option<f64>,
    pub redistribute_every: Option<usize>,
    pub fit_fraction: f64,
}

impl Default for FlowSection {
    fn default() -> Self {
        let c = FlowControls::default();
        FlowSection {
            integrator: c.integrator,
            stencil: c.stencil,
            resolution_budget: c.resolution_budget,
            curvature_cap: c.curvature_cap,
            max_steps: c.max_steps,
            dt_max: c.dt_max,
            redistribute_every: c.redistribute_every,
            fit_fraction: c.fit_fraction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlowupSection {
    /// Rescaled time at which the clouds are taken.
    pub time: f64,
    /// Ball radius of the decay integrals.
    pub radius: f64,
    /// Rescaled-time window [s1, s2] of the decay integrals.
    pub window: [f64; 2],
    /// Radii of the density ratios about the origin.
    pub density_radii: Vec<f64>,
    /// Plane fit of the largest-scale cloud. Its seed is replaced by the
    /// top-level seed.
    pub fit: FitParams,
}

impl Default for BlowupSection {
    fn default() -> Self {
        BlowupSection {
            time: -0.25,
            radius: 1.0,
            window: [-0.45, -0.1],
            density_radii: vec![0.5, 1.5, 2.0, 4.0],
            fit: FitParams::default(),
        }
    }
}

/// Verify settings; the seed comes from the top level.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub tolerances: BTreeMap<String, f64>,
    pub skip: Vec<String>,
    pub resolutions: Resolutions,
}

impl RunConfig {
    /// A config with every default and no scenario.
    pub fn empty() -> Self {
        serde_json::from_str(&format!("{{\"format_version\": {FORMAT_VERSION}}}"))
            .expect("defaults deserialize")
    }

    pub fn controls(&self) -> FlowControls {
        let f = &self.flow;
        FlowControls {
            cfl: self.cfl,
            integrator: f.integrator,
            stencil: f.stencil,
            resolution_budget: f.resolution_budget,
            curvature_cap: f.curvature_cap,
            snapshot_stride: self.snapshot_stride,
            max_steps: f.max_steps,
            dt_max: f.dt_max,
            redistribute_every: f.redistribute_every,
            fit_fraction: f.fit_fraction,
        }
    }

    pub fn verify_config(&self) -> VerifyConfig {
        VerifyConfig {
            seed: self.seed,
            tolerances: self.verify.tolerances.clone(),
            skip: self.verify.skip.clone(),
            resolutions: self.verify.resolutions.clone(),
        }
    }

    pub fn fit_params(&self) -> FitParams {
        FitParams {
            seed: self.seed,
            ..self.blowup.fit.clone()
        }
    }

    /// Everything that can be checked without running anything.
    pub fn validate(&self) -> Result<(), String> {
        if self.format_version != FORMAT_VERSION {
            return Err(format!(
                "format_version {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            ));
        }
        self.controls().validate().map_err(|e| e.to_string())?;
        if let Until::Time(t) = self.until {
            if !(t.is_finite() && t >= 0.0) {
                return Err(format!("until must be a non-negative time or \"singularity\", got {t}"));
            }
        }
        for k in &self.kernels {
            k.validate().map_err(|e| e.to_string())?;
        }
        if let Some(s) = &self.scenario {
            s.validate().map_err(|e| e.to_string())?;
            for &r in &self.resolutions {
                if r < 8 {
                    return Err(format!("resolution {r} is below the minimum of 8"));
                }
                if r == s.resolution() {
                    return Err(format!("resolution {r} repeats the scenario's own"));
                }
            }
            for k in &self.kernels {
                if k.n() != s.complex_dimension() {
                    return Err(format!(
                        "kernel center has {} coordinates, the scenario needs {}",
                        k.center.len(),
                        2 * s.complex_dimension()
                    ));
                }
            }
        } else if !self.resolutions.is_empty() {
            return Err("resolutions need a scenario".into());
        }
        if self.lambda_sequence.is_empty()
            || self.lambda_sequence.iter().any(|l| !(l.is_finite() && *l > 0.0))
        {
            return Err("lambda_sequence must be non-empty and positive".into());
        }
        let b = &self.blowup;
        if !(b.time < 0.0) {
            return Err(format!("blowup.time must be negative, got {}", b.time));
        }
        if !(b.radius > 0.0 && b.radius.is_finite()) {
            return Err("blowup.radius must be positive".into());
        }
        if !(b.window[0] < b.window[1] && b.window[1] < 0.0) {
            return Err("blowup.window must satisfy s1 < s2 < 0".into());
        }
        if b.density_radii.iter().any(|r| !(*r > 0.0))
            || b.density_radii.windows(2).any(|w| w[1] <= w[0])
        {
            return Err("blowup.density_radii must be positive and increasing".into());
        }
        self.verify_config().validate().map_err(|e| e.to_string())?;
        Ok(())
    }
}

/// Read, parse and validate a config file.
pub fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
    let config: RunConfig = serde_json::from_str(&text)
        .map_err(|e| Failure::usage(format!("invalid config {}: {e}", path.display())))?;
    config
        .validate()
        .map_err(|e| Failure::usage(format!("invalid config {}: {e}", path.display())))?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<RunConfig, String> {
        let c: RunConfig = serde_json::from_str(s).map_err(|e| e.to_string())?;
        c.validate()?;
        Ok(c)
    }

    #[test]
    fn defaults() {
        let c = RunConfig::empty();
        assert_eq!(c.controls(), FlowControls::default());
        assert_eq!(c.lambda_sequence, vec![1.0, 2.0, 4.0, 8.0]);
        assert_eq!(c.until, Until::SINGULARITY);
        c.validate().unwrap();
    }

    #[test]
    fn full_config() {
        let c = parse(
            r#"{
                "format_version": 1,
                "scenario": {"name": "circle", "r0": 1.0, "resolution": 64},
                "resolutions": [32],
                "cfl": 0.1,
                "until": 0.25,
                "snapshot_stride": 10,
                "kernels": [{"center": [0, 0], "reference_time": 0.5}],
                "seed": 3,
                "flow": {"stencil": "central2"},
                "blowup": {"time": -0.5},
                "verify": {"skip": ["geometry.clifford_angle"]}
            }"#,
        )
        .unwrap();
        assert_eq!(c.until, Until::Time(0.25));
        assert_eq!(c.controls().stencil, Stencil::Central2);
        assert_eq!(c.controls().cfl, 0.1);
        assert_eq!(c.verify_config().seed, 3);
        assert_eq!(c.fit_params().seed, 3);
    }

    #[test]
    fn rejections() {
        for bad in [
            r#"{}"#,
            r#"{"format_version": 2}"#,
            r#"{"format_version": 1, "cfl": -1}"#,
            r#"{"format_version": 1, "until": -1}"#,
            r#"{"format_version": 1, "until": "forever"}"#,
            r#"{"format_version": 1, "scenarios": []}"#,
            r#"{"format_version": 1, "lambda_sequence": [0]}"#,
            r#"{"format_version": 1, "resolutions": [32]}"#,
            r#"{"format_version": 1, "blowup": {"window": [-0.1, -0.2]}}"#,
            r#"{"format_version": 1, "scenario": {"name": "circle", "r0": 1.0, "resolution": 64},
                "kernels": [{"center": [0, 0, 0, 0], "reference_time": 1}]}"#,
            r#"{"format_version": 1, "scenario": {"name": "circle", "r0": 1.0, "resolution": 64},
                "resolutions": [64]}"#,
            r#"{"format_version": 1, "verify": {"resolutions": {"circle": 15}}}"#,
        ] {
            assert!(parse(bad).is_err(), "{bad}");
        }
    }
}
