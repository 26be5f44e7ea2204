use serde::{Deserialize, Serialize};

use crate::vector::{axpy, V4, ZERO};

/// Finite-difference stencil for first and second parametric derivatives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stencil {
    /// Second-order central differences.
    #[default]
    Central2,
    /// Fourth-order central differences.
    Central4,
}

const C2_FIRST: [(isize, f64); 2] = [(-1, -0.5), (1, 0.5)];
const C2_SECOND: [(isize, f64); 3] = [(-1, 1.0), (0, -2.0), (1, 1.0)];
const C4_FIRST: [(isize, f64); 4] = [
    (-2, 1.0 / 12.0),
    (-1, -8.0 / 12.0),
    (1, 8.0 / 12.0),
    (2, -1.0 / 12.0),
];
const C4_SECOND: [(isize, f64); 5] = [
    (-2, -1.0 / 12.0),
    (-1, 16.0 / 12.0),
    (0, -30.0 / 12.0),
    (1, 16.0 / 12.0),
    (2, -1.0 / 12.0),
];

impl Stencil {
    /// Offsets and weights of the first derivative, to be divided by h.
    pub fn first(self) -> &'static [(isize, f64)] {
        match self {
            Stencil::Central2 => &C2_FIRST,
            Stencil::Central4 => &C4_FIRST,
        }
    }

    /// Offsets and weights of the second derivative, to be divided by h^2.
    pub fn second(self) -> &'static [(isize, f64)] {
        match self {
            Stencil::Central2 => &C2_SECOND,
            Stencil::Central4 => &C4_SECOND,
        }
    }

    /// Formal order of accuracy.
    pub fn order(self) -> u32 {
        match self {
            Stencil::Central2 => 2,
            Stencil::Central4 => 4,
        }
    }
}

/// Periodic parameter grid over [0, 2pi)^n, row-major with the last index
/// fastest. For n = 1 the second extent is 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub n: usize,
    pub shape: [usize; 2],
    pub spacing: [f64; 2],
}

/// First and second parametric derivatives of a vector field at one vertex.
#[derive(Clone, Copy, Debug)]
pub struct Derivs {
    pub d1: [V4; 2],
    pub d2: [[V4; 2]; 2],
}

impl Grid {
    pub fn new(shape: &[usize]) -> Self {
        let n = shape.len();
        let s = [shape[0], if n == 2 { shape[1] } else { 1 }];
        let tau = std::f64::consts::TAU;
        Grid {
            n,
            shape: s,
            spacing: [
                tau / s[0] as f64,
                if n == 2 { tau / s[1] as f64 } else { 0.0 },
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.shape[0] * self.shape[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.shape[1] + j
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx / self.shape[1], idx % self.shape[1])
    }

    /// Parameter values (u_1, .., u_n) of a vertex.
    pub fn params(&self, idx: usize) -> [f64; 2] {
        let (i, j) = self.coords(idx);
        [i as f64 * self.spacing[0], j as f64 * self.spacing[1]]
    }

    /// Product of the parametric spacings, the trapezoidal cell measure.
    pub fn cell(&self) -> f64 {
        if self.n == 2 {
            self.spacing[0] * self.spacing[1]
        } else {
            self.spacing[0]
        }
    }

    /// Vertex reached from (i, j) by the offset (di, dj), together with the
    /// number of seam crossings in each direction.
    #[inline]
    pub fn neighbor(&self, i: usize, j: usize, di: isize, dj: isize) -> (usize, [i64; 2]) {
        // offsets are at most a few cells, far below any grid extent
        let wrap = |a: isize, len: usize| -> (usize, i64) {
            let len = len as isize;
            if a < 0 {
                ((a + len) as usize, -1)
            } else if a >= len {
                ((a - len) as usize, 1)
            } else {
                (a as usize, 0)
            }
        };
        let (a, wa) = wrap(i as isize + di, self.shape[0]);
        let (b, wb) = wrap(j as isize + dj, self.shape[1]);
        (self.index(a, b), [wa, wb])
    }

    /// Apply `stencil` to a field given by `f(neighbor_index, wraps)`.
    pub fn derivs<F>(&self, stencil: Stencil, idx: usize, f: F) -> Derivs
    where
        F: Fn(usize, [i64; 2]) -> V4,
    {
        let (i, j) = self.coords(idx);
        let mut out = Derivs {
            d1: [ZERO; 2],
            d2: [[ZERO; 2]; 2],
        };
        let h = self.spacing;
        let first = stencil.first();
        let second = stencil.second();

        let mut acc = ZERO;
        for &(o, w) in first {
            let (k, wr) = self.neighbor(i, j, o, 0);
            acc = axpy(&acc, w / h[0], &f(k, wr));
        }
        out.d1[0] = acc;
        let mut acc = ZERO;
        for &(o, w) in second {
            let (k, wr) = self.neighbor(i, j, o, 0);
            acc = axpy(&acc, w / (h[0] * h[0]), &f(k, wr));
        }
        out.d2[0][0] = acc;

        if self.n == 2 {
            let mut acc = ZERO;
            for &(o, w) in first {
                let (k, wr) = self.neighbor(i, j, 0, o);
                acc = axpy(&acc, w / h[1], &f(k, wr));
            }
            out.d1[1] = acc;
            let mut acc = ZERO;
            for &(o, w) in second {
                let (k, wr) = self.neighbor(i, j, 0, o);
                acc = axpy(&acc, w / (h[1] * h[1]), &f(k, wr));
            }
            out.d2[1][1] = acc;
            let mut acc = ZERO;
            for &(o1, w1) in first {
                for &(o2, w2) in first {
                    let (k, wr) = self.neighbor(i, j, o1, o2);
                    acc = axpy(&acc, w1 * w2 / (h[0] * h[1]), &f(k, wr));
                }
            }
            out.d2[0][1] = acc;
            out.d2[1][0] = acc;
        }
        out
    }

    /// First parametric derivatives of a scalar field.
    pub fn scalar_gradient<F>(&self, stencil: Stencil, idx: usize, f: F) -> [f64; 2]
    where
        F: Fn(usize) -> f64,
    {
        let (i, j) = self.coords(idx);
        let mut out = [0.0; 2];
        for &(o, w) in stencil.first() {
            out[0] += w * f(self.neighbor(i, j, o, 0).0);
        }
        out[0] /= self.spacing[0];
        if self.n == 2 {
            for &(o, w) in stencil.first() {
                out[1] += w * f(self.neighbor(i, j, 0, o).0);
            }
            out[1] /= self.spacing[1];
        }
        out
    }

    /// Scalar version of [`Grid::derivs`]: returns (first, second) derivatives.
    pub fn scalar_derivs<F>(&self, stencil: Stencil, idx: usize, f: F) -> ([f64; 2], [[f64; 2]; 2])
    where
        F: Fn(usize) -> f64,
    {
        let d = self.derivs(stencil, idx, |k, _| [f(k), 0.0, 0.0, 0.0]);
        (
            [d.d1[0][0], d.d1[1][0]],
            [
                [d.d2[0][0][0], d.d2[0][1][0]],
                [d.d2[1][0][0], d.d2[1][1][0]],
            ],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_order(stencil: Stencil) {
        // derivative errors of sin on the periodic grid
        let err = |n: usize| {
            let g = Grid::new(&[n]);
            let mut e1: f64 = 0.0;
            let mut e2: f64 = 0.0;
            for idx in 0..n {
                let u = g.params(idx)[0];
                let (d1, d2) = g.scalar_derivs(stencil, idx, |k| g.params(k)[0].sin());
                e1 = e1.max((d1[0] - u.cos()).abs());
                e2 = e2.max((d2[0][0] + u.sin()).abs());
            }
            (e1, e2)
        };
        let (a1, a2) = err(32);
        let (b1, b2) = err(64);
        let expect = 2f64.powi(stencil.order() as i32);
        assert!((a1 / b1 / expect - 1.0).abs() < 0.05, "{}", a1 / b1);
        assert!((a2 / b2 / expect - 1.0).abs() < 0.05, "{}", a2 / b2);
    }

    #[test]
    fn central_stencils_have_their_order() {
        check_order(Stencil::Central2);
        check_order(Stencil::Central4);
    }

    #[test]
    fn mixed_derivative_of_product() {
        let g = Grid::new(&[40, 48]);
        let f = |k: usize| {
            let p = g.params(k);
            p[0].sin() * (2.0 * p[1]).cos()
        };
        for idx in [0, 17, 555, 1919] {
            let p = g.params(idx);
            let (_, d2) = g.scalar_derivs(Stencil::Central4, idx, f);
            let exact = -2.0 * p[0].cos() * (2.0 * p[1]).sin();
            assert!((d2[0][1] - exact).abs() < 1e-3);
            assert_eq!(d2[0][1], d2[1][0]);
            let (d1, _) = g.scalar_derivs(Stencil::Central2, idx, f);
            let gr = g.scalar_gradient(Stencil::Central2, idx, f);
            assert!((gr[0] - d1[0]).abs() < 1e-13 && (gr[1] - d1[1]).abs() < 1e-13);
        }
    }

    #[test]
    fn neighbor_reports_seam_crossings() {
        let g = Grid::new(&[8, 10]);
        assert_eq!(g.neighbor(0, 0, -1, 0), (g.index(7, 0), [-1, 0]));
        assert_eq!(g.neighbor(7, 9, 2, 1), (g.index(1, 0), [1, 1]));
        assert_eq!(g.neighbor(3, 4, 1, -1), (g.index(4, 3), [0, 0]));
    }
}
