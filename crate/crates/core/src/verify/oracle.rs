use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed-form integrals evaluated by brute-force quadrature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Integrand {
    /// 2 * integral over [0, inf) of exp(-y^2) y^(n+1).
    CConstant { n: usize },
    /// Backward heat kernel at lag tau integrated over a round circle of the
    /// given radius whose center sits `offset` away from the kernel center.
    CircleDensity { radius: f64, tau: f64, offset: f64 },
    /// Same over the product torus of two circles, centered.
    CliffordDensity { radius: f64, tau: f64 },
    /// Heat kernel mass of an n-plane through the kernel center.
    PlaneGaussianMass { n: usize, tau: f64 },
}

/// Panels per axis of the coarsest grid for one- and two-dimensional
/// integrands; the refined grid has `refinement` times more.
pub const ORACLE_BASE_PANELS: [usize; 2] = [8192, 512];
/// Relative disagreement between the two grids above which the value is
/// rejected.
pub const ORACLE_TOLERANCE: f64 = 1e-9;

fn simpson_weights(m: usize) -> impl Iterator<Item = f64> {
    (0..=m).map(move |k| {
        if k == 0 || k == m {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        }
    })
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    let h = (b - a) / m as f64;
    simpson_weights(m)
        .enumerate()
        .map(|(k, w)| w * f(a + h * k as f64))
        .sum::<f64>()
        * h
        / 3.0
}

fn simpson_2d(f: impl Fn(f64, f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    let h = (b - a) / m as f64;
    let w: Vec<f64> = simpson_weights(m).collect();
    let mut s = 0.0;
    for (i, wi) in w.iter().enumerate() {
        let x = a + h * i as f64;
        for (j, wj) in w.iter().enumerate() {
            s += wi * wj * f(x, a + h * j as f64);
        }
    }
    s * h * h / 9.0
}

fn kernel_1d(d_sq: f64, tau: f64) -> f64 {
    (4.0 * PI * tau).powf(-0.5) * (-d_sq / (4.0 * tau)).exp()
}

fn evaluate(integrand: &Integrand, m: usize) -> f64 {
    match *integrand {
        Integrand::CConstant { n } => {
            2.0 * simpson(|y| (-y * y).exp() * y.powi(n as i32 + 1), 0.0, 12.0, m)
        }
        Integrand::CircleDensity {
            radius,
            tau,
            offset,
        } => simpson(
            |u| {
                let (x, y) = (offset + radius * u.cos(), radius * u.sin());
                kernel_1d(x * x + y * y, tau) * radius
            },
            0.0,
            TAU,
            m,
        ),
        Integrand::CliffordDensity { radius, tau } => simpson_2d(
            |u, v| {
                let x = [
                    radius * u.cos(),
                    radius * v.cos(),
                    radius * u.sin(),
                    radius * v.sin(),
                ];
                let d_sq: f64 = x.iter().map(|c| c * c).sum();
                (4.0 * PI * tau).recip() * (-d_sq / (4.0 * tau)).exp() * radius * radius
            },
            0.0,
            TAU,
            m,
        ),
        Integrand::PlaneGaussianMass { n, tau } => {
            let l = 40.0 * tau.sqrt();
            match n {
                1 => simpson(|x| kernel_1d(x * x, tau), -l, l, m),
                _ => simpson_2d(
                    |x, y| kernel_1d(x * x, tau) * kernel_1d(y * y, tau),
                    -l,
                    l,
                    m,
                ),
            }
        }
    }
}

fn validate(integrand: &Integrand) -> Result<()> {
    let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
    match *integrand {
        Integrand::CConstant { n } | Integrand::PlaneGaussianMass { n, .. }
            if !matches!(n, 1 | 2) =>
        {
            bad("dimension must be 1 or 2")
        }
        Integrand::CircleDensity {
            radius,
            tau,
            offset,
        } if !(radius > 0.0 && tau > 0.0 && offset.is_finite()) => {
            bad("radius and tau must be positive")
        }
        Integrand::CliffordDensity { radius, tau } if !(radius > 0.0 && tau > 0.0) => {
            bad("radius and tau must be positive")
        }
        Integrand::PlaneGaussianMass { tau, .. } if !(tau > 0.0) => bad("tau must be positive"),
        _ => Ok(()),
    }
}

/// Composite Simpson value of the integrand on the base grid refined by the
/// given factor, accepted only if it agrees with the base grid.
pub fn oracle_quadrature(integrand: &Integrand, refinement: usize) -> Result<f64> {
    if refinement < 2 {
        return Err(Error::InvalidParameter(format!(
            "refinement must be at least 2, got {refinement}"
        )));
    }
    validate(integrand)?;
    let dim = match integrand {
        Integrand::CliffordDensity { .. } | Integrand::PlaneGaussianMass { n: 2, .. } => 2,
        _ => 1,
    };
    let base = ORACLE_BASE_PANELS[dim - 1];
    let coarse = evaluate(integrand, base);
    let fine = evaluate(integrand, base * refinement);
    let gap = (fine - coarse).abs();
    if !(gap <= ORACLE_TOLERANCE * fine.abs().max(1.0)) {
        return Err(Error::NonConvergent(format!(
            "{integrand:?}: {coarse} vs {fine} after refinement {refinement}"
        )));
    }
    Ok(fine)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    #[test]
    fn closed_forms() {
        let c2 = oracle_quadrature(&Integrand::CConstant { n: 2 }, 2).unwrap();
        assert!((c2 - 1.0).abs() < 1e-8);
        let c1 = oracle_quadrature(&Integrand::CConstant { n: 1 }, 2).unwrap();
        assert!((c1 - PI.sqrt() / 2.0).abs() < 1e-8);
        let circle = Integrand::CircleDensity {
            radius: 1.0,
            tau: 0.5,
            offset: 0.0,
        };
        let d = oracle_quadrature(&circle, 2).unwrap();
        assert!((d - 1.5203).abs() < 1e-4);
        assert!((d - (TAU / E).sqrt()).abs() < 1e-12);
        let t = oracle_quadrature(
            &Integrand::CliffordDensity {
                radius: 1.0,
                tau: 0.5,
            },
            2,
        )
        .unwrap();
        assert!((t - TAU / E).abs() < 1e-12);
        for n in [1, 2] {
            let m = oracle_quadrature(&Integrand::PlaneGaussianMass { n, tau: 0.3 }, 2).unwrap();
            assert!((m - 1.0).abs() < 1e-8, "{m}");
        }
    }

    // a circle through the kernel center looks like a line at small lag
    #[test]
    fn offset_circle_density() {
        let c = Integrand::CircleDensity {
            radius: 1.0,
            tau: 1e-3,
            offset: 1.0,
        };
        let d = oracle_quadrature(&c, 4).unwrap();
        assert!((d - 1.0).abs() < 1e-2, "{d}");
    }

    #[test]
    fn refusals() {
        let c = Integrand::CConstant { n: 2 };
        assert!(matches!(
            oracle_quadrature(&c, 1),
            Err(Error::InvalidParameter(_))
        ));
        assert!(oracle_quadrature(&Integrand::CConstant { n: 3 }, 2).is_err());
        // a kernel far narrower than the base spacing is not resolved
        let sharp = Integrand::CircleDensity {
            radius: 1.0,
            tau: 1e-7,
            offset: 1.0,
        };
        assert!(matches!(
            oracle_quadrature(&sharp, 2),
            Err(Error::NonConvergent(_))
        ));
    }
}
