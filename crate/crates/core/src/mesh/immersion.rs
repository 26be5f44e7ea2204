use serde::{Deserialize, Serialize};

use super::grid::Grid;
use crate::error::{Error, Result};
use crate::vector::{add, load, scale, sub, V4, ZERO};

/// Flat ambient space: C^n itself, or a flat torus whose lattice is spanned
/// by `periods[k] * e_{x_k}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmbientSpace {
    pub complex_dimension: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub periods: Option<Vec<f64>>,
}

impl AmbientSpace {
    pub fn euclidean(n: usize) -> Result<Self> {
        let a = AmbientSpace {
            complex_dimension: n,
            periods: None,
        };
        a.validate()?;
        Ok(a)
    }

    pub fn torus(periods: Vec<f64>) -> Result<Self> {
        let a = AmbientSpace {
            complex_dimension: periods.len(),
            periods: Some(periods),
        };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.complex_dimension) {
            return Err(Error::InvalidParameter(format!(
                "complex dimension must be 1 or 2, got {}",
                self.complex_dimension
            )));
        }
        if let Some(p) = &self.periods {
            if p.len() != self.complex_dimension {
                return Err(Error::InvalidParameter(format!(
                    "expected {} periods, got {}",
                    self.complex_dimension,
                    p.len()
                )));
            }
            if p.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(Error::InvalidParameter("periods must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn real_dimension(&self) -> usize {
        2 * self.complex_dimension
    }

    pub fn is_periodic(&self) -> bool {
        self.periods.is_some()
    }

    /// Lattice generators, one per period (empty for C^n).
    pub fn lattice(&self) -> Vec<V4> {
        match &self.periods {
            None => Vec::new(),
            Some(p) => p
                .iter()
                .enumerate()
                .map(|(k, &l)| {
                    let mut v = ZERO;
                    v[k] = l;
                    v
                })
                .collect(),
        }
    }

    /// Ambient space after the dilation X -> lambda X.
    pub fn scaled(&self, lambda: f64) -> Self {
        AmbientSpace {
            complex_dimension: self.complex_dimension,
            periods: self
                .periods
                .as_ref()
                .map(|p| p.iter().map(|x| x * lambda).collect()),
        }
    }
}

/// Discrete immersion of the parameter torus into the ambient space.
///
/// `winding[d][k]` counts how many lattice periods along `x_k` are crossed
/// when the parameter `u_d` goes once around; it is zero for C^n.
#[derive(Clone, Debug, PartialEq)]
pub struct Immersion {
    ambient: AmbientSpace,
    grid: Grid,
    positions: Vec<V4>,
    winding: [[i64; 2]; 2],
}

impl Immersion {
    pub fn new(
        ambient: AmbientSpace,
        grid_shape: &[usize],
        positions: Vec<V4>,
        winding: [[i64; 2]; 2],
    ) -> Result<Self> {
        ambient.validate()?;
        let n = ambient.complex_dimension;
        if grid_shape.len() != n {
            return Err(Error::InvalidParameter(format!(
                "grid has {} directions, ambient dimension is {n}",
                grid_shape.len()
            )));
        }
        if let Some(&r) = grid_shape.iter().find(|&&r| r < 8) {
            return Err(Error::Resolution(r));
        }
        let grid = Grid::new(grid_shape);
        if positions.len() != grid.len() {
            return Err(Error::InvalidParameter(format!(
                "expected {} positions, got {}",
                grid.len(),
                positions.len()
            )));
        }
        for (v, p) in positions.iter().enumerate() {
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("position of vertex {v}")));
            }
            if p[2 * n..].iter().any(|&x| x != 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "vertex {v} has coordinates beyond R^{}",
                    2 * n
                )));
            }
        }
        let nonzero = winding.iter().flatten().any(|&w| w != 0);
        if nonzero && !ambient.is_periodic() {
            return Err(Error::InvalidParameter(
                "winding requires a periodic ambient".into(),
            ));
        }
        Ok(Immersion {
            ambient,
            grid,
            positions,
            winding,
        })
    }

    /// Sample `f(u)` on the uniform periodic grid; `f` returns the first 2n
    /// coordinates.
    pub fn from_fn<F>(
        ambient: AmbientSpace,
        grid_shape: &[usize],
        winding: [[i64; 2]; 2],
        f: F,
    ) -> Result<Self>
    where
        F: Fn(&[f64]) -> Vec<f64>,
    {
        if grid_shape.len() != ambient.complex_dimension || grid_shape.iter().any(|&r| r < 8) {
            // Let `new` produce the precise error.
            return Immersion::new(ambient, grid_shape, Vec::new(), winding);
        }
        let grid = Grid::new(grid_shape);
        let n = grid.n;
        let positions = (0..grid.len())
            .map(|idx| {
                let u = grid.params(idx);
                let p = f(&u[..n]);
                load(&p[..2 * n])
            })
            .collect();
        Immersion::new(ambient, grid_shape, positions, winding)
    }

    pub fn ambient(&self) -> &AmbientSpace {
        &self.ambient
    }

    pub fn n(&self) -> usize {
        self.grid.n
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn grid_shape(&self) -> Vec<usize> {
        self.grid.shape[..self.grid.n].to_vec()
    }

    pub fn winding(&self) -> [[i64; 2]; 2] {
        self.winding
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[V4] {
        &self.positions
    }

    pub fn point(&self, idx: usize) -> &V4 {
        &self.positions[idx]
    }

    /// Positions as a flat row-major array of 2n coordinates per vertex.
    pub fn flat_positions(&self) -> Vec<f64> {
        let d = 2 * self.n();
        self.positions
            .iter()
            .flat_map(|p| p[..d].iter().copied())
            .collect()
    }

    /// Inverse of [`Immersion::flat_positions`].
    pub fn from_flat(
        ambient: AmbientSpace,
        grid_shape: &[usize],
        flat: &[f64],
        winding: [[i64; 2]; 2],
    ) -> Result<Self> {
        let d = 2 * ambient.complex_dimension;
        if flat.len() % d != 0 {
            return Err(Error::InvalidParameter(format!(
                "flat position array length {} is not a multiple of {d}",
                flat.len()
            )));
        }
        let positions = flat.chunks(d).map(load).collect();
        Immersion::new(ambient, grid_shape, positions, winding)
    }

    /// Ambient translation picked up when crossing the seam of direction `d`
    /// once in the positive sense.
    pub fn seam_shift(&self, d: usize) -> V4 {
        let mut s = ZERO;
        for (k, g) in self.ambient.lattice().iter().enumerate() {
            s = crate::vector::axpy(&s, self.winding[d][k] as f64, g);
        }
        s
    }

    /// Position of a neighbor, lifted across seams so that differences are
    /// taken in the universal cover.
    #[inline]
    pub fn lifted(&self, idx: usize, wraps: [i64; 2], shifts: &[V4; 2]) -> V4 {
        let mut p = self.positions[idx];
        for d in 0..2 {
            if wraps[d] != 0 {
                p = crate::vector::axpy(&p, wraps[d] as f64, &shifts[d]);
            }
        }
        p
    }

    /// Same grid and ambient, new positions.
    pub fn with_positions(&self, positions: Vec<V4>) -> Result<Self> {
        Immersion::new(
            self.ambient.clone(),
            &self.grid_shape(),
            positions,
            self.winding,
        )
    }

    /// Image under X -> center + factor (X - center); the ambient lattice is
    /// dilated accordingly.
    pub fn scaled_about(&self, center: &V4, factor: f64) -> Result<Self> {
        let positions = self
            .positions
            .iter()
            .map(|p| add(center, &scale(&sub(p, center), factor)))
            .collect();
        Immersion::new(
            self.ambient.scaled(factor),
            &self.grid_shape(),
            positions,
            self.winding,
        )
    }

    /// Image under a linear map of R^{2n} (C^n ambients only, since a general
    /// map does not preserve the lattice).
    pub fn apply_linear(&self, m: &[[f64; 4]; 4]) -> Result<Self> {
        if self.ambient.is_periodic() {
            return Err(Error::InvalidParameter(
                "linear maps are only supported in C^n".into(),
            ));
        }
        let d = 2 * self.n();
        let positions = self
            .positions
            .iter()
            .map(|p| {
                let mut q = ZERO;
                for (r, qr) in q.iter_mut().enumerate().take(d) {
                    *qr = (0..d).map(|c| m[r][c] * p[c]).sum();
                }
                q
            })
            .collect();
        self.with_positions(positions)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_input() {
        assert!(AmbientSpace::euclidean(3).is_err());
        assert!(AmbientSpace::torus(vec![1.0, -1.0]).is_err());
        let a = AmbientSpace::euclidean(1).unwrap();
        assert_eq!(
            Immersion::new(a.clone(), &[4], vec![ZERO; 4], [[0; 2]; 2]),
            Err(Error::Resolution(4))
        );
        let mut bad = vec![ZERO; 8];
        bad[3][0] = f64::NAN;
        assert!(matches!(
            Immersion::new(a.clone(), &[8], bad, [[0; 2]; 2]),
            Err(Error::NonFinite(_))
        ));
        assert!(Immersion::new(a, &[8], vec![ZERO; 8], [[1, 0], [0, 0]]).is_err());
    }

    #[test]
    fn flat_round_trip() {
        let a = AmbientSpace::euclidean(2).unwrap();
        let im = Immersion::from_fn(a.clone(), &[8, 9], [[0; 2]; 2], |u| {
            vec![u[0].cos(), u[1].cos(), u[0].sin(), u[1].sin()]
        })
        .unwrap();
        let flat = im.flat_positions();
        assert_eq!(flat.len(), 8 * 9 * 4);
        let back = Immersion::from_flat(a, &[8, 9], &flat, [[0; 2]; 2]).unwrap();
        assert_eq!(back, im);
    }

    #[test]
    fn seam_shift_uses_lattice() {
        let a = AmbientSpace::torus(vec![2.0, 3.0]).unwrap();
        let im = Immersion::from_fn(a, &[8, 8], [[1, 0], [0, 2]], |u| {
            vec![
                u[0] / std::f64::consts::TAU * 2.0,
                3.0 * u[1] / std::f64::consts::PI,
                0.0,
                0.0,
            ]
        })
        .unwrap();
        assert_eq!(im.seam_shift(0), [2.0, 0.0, 0.0, 0.0]);
        assert_eq!(im.seam_shift(1), [0.0, 6.0, 0.0, 0.0]);
    }
}
