//! Catalog of analytic initial surfaces.
//!
//! Every entry is a product of planar curves or the graph of an exact
//! 1-form, so the sampled immersions are Lagrangian up to roundoff.

use std::f64::consts::{FRAC_PI_2, TAU};

use serde::{Deserialize, Serialize};

use super::immersion::{AmbientSpace, Immersion};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scenario {
    /// Round circle of radius `r0` about the origin of C.
    Circle { r0: f64, resolution: usize },
    /// Periodic graph x -> (x, -eps sin x) in the cylinder C / 2pi Z.
    GraphCurve { eps: f64, resolution: usize },
    /// (u, v) -> (r0 e^{iu}, r0 e^{iv}) in C^2.
    CliffordTorus { r0: f64, resolution: usize },
    /// Graph of d(eps cos x + delta cos y) over the flat torus R^2 / (2pi Z)^2.
    LagrangianGraph {
        eps: f64,
        delta: f64,
        resolution: usize,
    },
    /// Product of two ellipse-like curves r0 (1 + eps cos 2u) e^{iu}.
    PerturbedClifford {
        r0: f64,
        eps: f64,
        resolution: usize,
    },
}

impl Scenario {
    /// Look a scenario up by name with positional parameters (resolution last).
    pub fn from_name(name: &str, params: &[f64], resolution: usize) -> Result<Self> {
        let need = |k: usize| -> Result<()> {
            if params.len() == k {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "scenario `{name}` takes {k} parameters, got {}",
                    params.len()
                )))
            }
        };
        let s = match name {
            "circle" => {
                need(1)?;
                Scenario::Circle {
                    r0: params[0],
                    resolution,
                }
            }
            "graph_curve" => {
                need(1)?;
                Scenario::GraphCurve {
                    eps: params[0],
                    resolution,
                }
            }
            "clifford_torus" => {
                need(1)?;
                Scenario::CliffordTorus {
                    r0: params[0],
                    resolution,
                }
            }
            "lagrangian_graph" => {
                need(2)?;
                Scenario::LagrangianGraph {
                    eps: params[0],
                    delta: params[1],
                    resolution,
                }
            }
            "perturbed_clifford" => {
                need(2)?;
                Scenario::PerturbedClifford {
                    r0: params[0],
                    eps: params[1],
                    resolution,
                }
            }
            other => return Err(Error::UnknownScenario(other.to_string())),
        };
        Ok(s)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Circle { .. } => "circle",
            Scenario::GraphCurve { .. } => "graph_curve",
            Scenario::CliffordTorus { .. } => "clifford_torus",
            Scenario::LagrangianGraph { .. } => "lagrangian_graph",
            Scenario::PerturbedClifford { .. } => "perturbed_clifford",
        }
    }

    pub fn resolution(&self) -> usize {
        match *self {
            Scenario::Circle { resolution, .. }
            | Scenario::GraphCurve { resolution, .. }
            | Scenario::CliffordTorus { resolution, .. }
            | Scenario::LagrangianGraph { resolution, .. }
            | Scenario::PerturbedClifford { resolution, .. } => resolution,
        }
    }

    pub fn complex_dimension(&self) -> usize {
        match self {
            Scenario::Circle { .. } | Scenario::GraphCurve { .. } => 1,
            _ => 2,
        }
    }

    /// Whether the surface has cos theta > 0 everywhere.
    pub fn almost_calibrated(&self) -> bool {
        matches!(
            self,
            Scenario::GraphCurve { .. } | Scenario::LagrangianGraph { .. }
        )
    }

    /// Same scenario at another resolution.
    pub fn with_resolution(&self, resolution: usize) -> Self {
        let mut s = self.clone();
        match &mut s {
            Scenario::Circle { resolution: r, .. }
            | Scenario::GraphCurve { resolution: r, .. }
            | Scenario::CliffordTorus { resolution: r, .. }
            | Scenario::LagrangianGraph { resolution: r, .. }
            | Scenario::PerturbedClifford { resolution: r, .. } => *r = resolution,
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |name: &str, x: f64| {
            if x.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be finite")))
            }
        };
        let positive = |name: &str, x: f64| {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive")))
            }
        };
        if self.resolution() < 8 {
            return Err(Error::Resolution(self.resolution()));
        }
        match *self {
            Scenario::Circle { r0, .. } | Scenario::CliffordTorus { r0, .. } => positive("r0", r0),
            Scenario::GraphCurve { eps, .. } => finite("eps", eps),
            Scenario::LagrangianGraph { eps, delta, .. } => {
                finite("eps", eps)?;
                finite("delta", delta)?;
                if eps.abs().atan() + delta.abs().atan() >= FRAC_PI_2 {
                    return Err(Error::NotAlmostCalibrated(format!(
                        "arctan|eps| + arctan|delta| must stay below pi/2 (eps = {eps}, delta = {delta})"
                    )));
                }
                Ok(())
            }
            Scenario::PerturbedClifford { r0, eps, .. } => {
                positive("r0", r0)?;
                finite("eps", eps)?;
                if eps.abs() >= 0.5 {
                    return Err(Error::InvalidParameter(format!(
                        "|eps| must be below 0.5, got {eps}"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn build(&self) -> Result<Immersion> {
        self.validate()?;
        let n = self.resolution();
        match *self {
            Scenario::Circle { r0, .. } => {
                Immersion::from_fn(AmbientSpace::euclidean(1)?, &[n], [[0; 2]; 2], |u| {
                    vec![r0 * u[0].cos(), r0 * u[0].sin()]
                })
            }
            Scenario::GraphCurve { eps, .. } => Immersion::from_fn(
                AmbientSpace::torus(vec![TAU])?,
                &[n],
                [[1, 0], [0, 0]],
                |u| vec![u[0], -eps * u[0].sin()],
            ),
            Scenario::CliffordTorus { r0, .. } => {
                Immersion::from_fn(AmbientSpace::euclidean(2)?, &[n, n], [[0; 2]; 2], |u| {
                    vec![
                        r0 * u[0].cos(),
                        r0 * u[1].cos(),
                        r0 * u[0].sin(),
                        r0 * u[1].sin(),
                    ]
                })
            }
            Scenario::LagrangianGraph { eps, delta, .. } => Immersion::from_fn(
                AmbientSpace::torus(vec![TAU, TAU])?,
                &[n, n],
                [[1, 0], [0, 1]],
                |u| vec![u[0], u[1], -eps * u[0].sin(), -delta * u[1].sin()],
            ),
            Scenario::PerturbedClifford { r0, eps, .. } => {
                Immersion::from_fn(AmbientSpace::euclidean(2)?, &[n, n], [[0; 2]; 2], |u| {
                    let a = r0 * (1.0 + eps * (2.0 * u[0]).cos());
                    let b = r0 * (1.0 + eps * (2.0 * u[1]).cos());
                    vec![
                        a * u[0].cos(),
                        b * u[1].cos(),
                        a * u[0].sin(),
                        b * u[1].sin(),
                    ]
                })
            }
        }
    }
}

/// Build a scenario by name; see [`Scenario::from_name`].
pub fn build_scenario(name: &str, params: &[f64], resolution: usize) -> Result<Immersion> {
    Scenario::from_name(name, params, resolution)?.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_and_invalid() {
        assert_eq!(
            build_scenario("sphere", &[1.0], 32),
            Err(Error::UnknownScenario("sphere".into()))
        );
        assert_eq!(
            build_scenario("circle", &[1.0], 7),
            Err(Error::Resolution(7))
        );
        assert!(matches!(
            build_scenario("lagrangian_graph", &[1.0, 1.0], 32),
            Err(Error::NotAlmostCalibrated(_))
        ));
        assert!(build_scenario("perturbed_clifford", &[1.0, 0.6], 32).is_err());
        assert!(build_scenario("circle", &[-1.0], 32).is_err());
    }

    #[test]
    fn circle_points_lie_on_circle() {
        let im = build_scenario("circle", &[1.0], 64).unwrap();
        assert_eq!(im.len(), 64);
        for p in im.positions() {
            assert!((p[0].hypot(p[1]) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn serde_tagged_form() {
        let s: Scenario = serde_json::from_str(
            r#"{"name":"lagrangian_graph","eps":0.1,"delta":0.1,"resolution":32}"#,
        )
        .unwrap();
        assert_eq!(
            s,
            Scenario::from_name("lagrangian_graph", &[0.1, 0.1], 32).unwrap()
        );
        assert!(serde_json::from_str::<Scenario>(
            r#"{"name":"circle","r0":1,"resolution":8,"x":1}"#
        )
        .is_err());
    }
}
