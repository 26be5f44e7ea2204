use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rayon::prelude::*;

use super::grid::{Grid, Stencil};
use super::immersion::Immersion;
use crate::error::{Error, Result};
use crate::vector::{axpy, complex_j, dot, norm, norm_sq, omega, scale, sub, wrap_pi, V4, ZERO};

/// Vertices per rayon task; small grids run effectively sequentially.
pub const PAR_CHUNK: usize = 512;

/// Differential geometry at a single vertex. Index pairs beyond `n` are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexGeometry {
    /// Coordinate tangent vectors dF/du_j.
    pub tangent: [V4; 2],
    /// Second parametric derivatives d^2F/du_i du_j.
    pub hessian: [[V4; 2]; 2],
    pub metric: [[f64; 2]; 2],
    pub metric_inv: [[f64; 2]; 2],
    pub area_element: f64,
    /// Gram-Schmidt orthonormalization of the tangent frame.
    pub orthonormal_tangent: [V4; 2],
    /// nu_a = J e_a.
    pub normal_frame: [V4; 2],
    /// h^a_ij = <d^2F/du_i du_j, nu_a>, coordinate indices.
    pub second_fundamental_form: [[[f64; 2]; 2]; 2],
    /// h^a(e_b, e_c) in the orthonormal tangent frame.
    pub sff_orthonormal: [[[f64; 2]; 2]; 2],
    pub mean_curvature: V4,
    pub norm_a_sq: f64,
    /// g^{ij} Gamma^k_ij, the first-order part of the Laplace-Beltrami operator.
    pub christoffel_trace: [f64; 2],
    /// det of the complex n x n matrix of tangent components, equal to
    /// e^{i theta} sqrt(det g) on Lagrangian surfaces.
    pub frame_det: Complex64,
    /// arg of `frame_det` in (-pi, pi].
    pub theta_raw: f64,
    /// Continuous branch of the Lagrangian angle.
    pub theta: f64,
    pub cos_theta: f64,
    pub grad_theta: V4,
    pub grad_cos_theta: V4,
}

/// Per-vertex geometry of an immersion together with the grid it lives on.
#[derive(Clone, Debug, PartialEq)]
pub struct GeometryCache {
    pub grid: Grid,
    pub stencil: Stencil,
    pub vertices: Vec<VertexGeometry>,
}

pub fn compute_geometry(im: &Immersion) -> Result<GeometryCache> {
    compute_geometry_with(im, Stencil::Central2, None)
}

/// Geometry with an explicit stencil. When `reference` is given, the angle
/// branch is shifted by a global multiple of 2pi to stay continuous in time.
pub fn compute_geometry_with(
    im: &Immersion,
    stencil: Stencil,
    reference: Option<&GeometryCache>,
) -> Result<GeometryCache> {
    let grid = im.grid().clone();
    let n = grid.n;
    let shifts = [im.seam_shift(0), im.seam_shift(1)];

    let mut vertices = (0..grid.len())
        .into_par_iter()
        .with_min_len(PAR_CHUNK)
        .map(|idx| {
            let d = grid.derivs(stencil, idx, |k, w| im.lifted(k, w, &shifts));
            pointwise(n, idx, &d.d1, &d.d2)
        })
        .collect::<Result<Vec<_>>>()?;

    let raw: Vec<f64> = vertices.iter().map(|v| v.theta_raw).collect();
    let mut theta = unwrap_angle(&grid, &raw)?;
    if let Some(r) = reference {
        if r.vertices.len() != theta.len() {
            return Err(Error::GridMismatch);
        }
        align_branch(&mut theta, r.vertices.iter().map(|v| v.theta))?;
    }

    let cos: Vec<f64> = raw.iter().map(|t| t.cos()).collect();
    let grads: Vec<(V4, V4)> = (0..grid.len())
        .into_par_iter()
        .with_min_len(PAR_CHUNK)
        .map(|idx| {
            let v = &vertices[idx];
            let dth = grid.scalar_gradient(stencil, idx, |k| wrap_pi(raw[k] - raw[idx]));
            let dc = grid.scalar_gradient(stencil, idx, |k| cos[k]);
            (gradient(n, v, &dth), gradient(n, v, &dc))
        })
        .collect();

    for (((v, th), (gt, gc)), c) in vertices.iter_mut().zip(theta).zip(grads).zip(cos) {
        v.theta = th;
        v.cos_theta = c;
        v.grad_theta = gt;
        v.grad_cos_theta = gc;
    }
    Ok(GeometryCache {
        grid,
        stencil,
        vertices,
    })
}

/// What a time step needs: the mean curvature field and the scalar
/// diagnostics of the step log. Skips the angle branch, frames and
/// gradients of the full [`GeometryCache`].
#[derive(Clone, Debug, PartialEq)]
pub struct StepGeometry {
    pub mean_curvature: Vec<V4>,
    pub volume: f64,
    pub max_norm_a_sq: f64,
    pub min_cos_theta: f64,
    pub max_mean_curvature: f64,
    /// As [`GeometryCache::h_min`].
    pub h_min: f64,
}

struct StepVertex {
    h: V4,
    a_sq: f64,
    area: f64,
    cos: f64,
    lam_min: f64,
}

pub fn step_geometry(im: &Immersion, stencil: Stencil) -> Result<StepGeometry> {
    let grid = im.grid();
    let n = grid.n;
    let shifts = [im.seam_shift(0), im.seam_shift(1)];
    let per: Vec<StepVertex> = (0..grid.len())
        .into_par_iter()
        .with_min_len(PAR_CHUNK)
        .map(|idx| {
            let d = grid.derivs(stencil, idx, |k, w| im.lifted(k, w, &shifts));
            let t = &d.d1;
            let mut e = [ZERO; 2];
            let l0 = norm(&t[0]);
            e[0] = scale(&t[0], 1.0 / l0);
            let (g00, g01, g11);
            if n == 2 {
                g00 = l0 * l0;
                g01 = dot(&t[0], &t[1]);
                g11 = norm_sq(&t[1]);
                let w = axpy(&t[1], -dot(&t[1], &e[0]), &e[0]);
                e[1] = scale(&w, 1.0 / norm(&w));
            } else {
                g00 = l0 * l0;
                g01 = 0.0;
                g11 = 1.0;
            }
            let det = g00 * g11 - g01 * g01;
            if !(det.is_finite() && det > 1e-24 * g00 * g11 && det > 0.0) {
                return Err(Error::DegenerateMetric { vertex: idx, det });
            }
            let (h, a_sq, lam_min, z) = if n == 1 {
                let hn = normal_part(&d.d2[0][0], &e, 1);
                let h = scale(&hn, 1.0 / g00);
                (h, norm_sq(&h), g00, Complex64::new(t[0][0], t[0][1]))
            } else {
                let (i00, i01, i11) = (g11 / det, -g01 / det, g00 / det);
                let a = normal_part(&d.d2[0][0], &e, 2);
                let b = normal_part(&d.d2[0][1], &e, 2);
                let c = normal_part(&d.d2[1][1], &e, 2);
                let h = axpy(&axpy(&scale(&a, i00), 2.0 * i01, &b), i11, &c);
                // g^{ik} g^{jl} <A_ij, A_kl> with A symmetric
                let (aa, ab, ac, bb, bc, cc) = (
                    dot(&a, &a),
                    dot(&a, &b),
                    dot(&a, &c),
                    dot(&b, &b),
                    dot(&b, &c),
                    dot(&c, &c),
                );
                let a_sq = i00 * i00 * aa
                    + 4.0 * i00 * i01 * ab
                    + 2.0 * i01 * i01 * ac
                    + 2.0 * (i00 * i11 + i01 * i01) * bb
                    + 4.0 * i01 * i11 * bc
                    + i11 * i11 * cc;
                let tr = g00 + g11;
                let lam = 0.5 * (tr - ((g00 - g11).powi(2) + 4.0 * g01 * g01).sqrt());
                let m = |k: usize, j: usize| Complex64::new(t[j][k], t[j][2 + k]);
                (h, a_sq, lam, m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0))
            };
            Ok(StepVertex {
                h,
                a_sq,
                area: det.sqrt(),
                cos: z.re / z.norm(),
                lam_min,
            })
        })
        .collect::<Result<_>>()?;
    let hp = grid.spacing[..n]
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let mut out = StepGeometry {
        mean_curvature: Vec::with_capacity(per.len()),
        volume: 0.0,
        max_norm_a_sq: 0.0,
        min_cos_theta: f64::INFINITY,
        max_mean_curvature: 0.0,
        h_min: f64::INFINITY,
    };
    for v in &per {
        out.mean_curvature.push(v.h);
        out.volume += v.area;
        out.max_norm_a_sq = out.max_norm_a_sq.max(v.a_sq);
        out.min_cos_theta = out.min_cos_theta.min(v.cos);
        out.max_mean_curvature = out.max_mean_curvature.max(norm(&v.h));
        out.h_min = out.h_min.min(v.lam_min);
    }
    out.volume *= grid.cell();
    out.h_min = hp * out.h_min.sqrt();
    Ok(out)
}

/// Mean curvature vector field alone.
pub fn mean_curvature_field(im: &Immersion, stencil: Stencil) -> Result<Vec<V4>> {
    Ok(step_geometry(im, stencil)?.mean_curvature)
}

fn gradient(n: usize, v: &VertexGeometry, df: &[f64; 2]) -> V4 {
    let mut g = ZERO;
    for i in 0..n {
        let c: f64 = (0..n).map(|j| v.metric_inv[i][j] * df[j]).sum();
        g = axpy(&g, c, &v.tangent[i]);
    }
    g
}

fn normal_part(v: &V4, e: &[V4; 2], n: usize) -> V4 {
    let mut out = *v;
    for ea in e.iter().take(n) {
        out = axpy(&out, -dot(v, ea), ea);
    }
    out
}

fn pointwise(n: usize, idx: usize, t: &[V4; 2], hess: &[[V4; 2]; 2]) -> Result<VertexGeometry> {
    let mut g = [[0.0; 2]; 2];
    for i in 0..n {
        for j in 0..n {
            g[i][j] = dot(&t[i], &t[j]);
        }
    }
    let (det, ginv) = if n == 1 {
        (g[0][0], [[1.0 / g[0][0], 0.0], [0.0, 0.0]])
    } else {
        let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
        (
            det,
            [
                [g[1][1] / det, -g[0][1] / det],
                [-g[1][0] / det, g[0][0] / det],
            ],
        )
    };
    let scale_ref: f64 = (0..n).map(|i| g[i][i]).product();
    if !(det.is_finite() && det > 1e-24 * scale_ref && det > 0.0) {
        return Err(Error::DegenerateMetric { vertex: idx, det });
    }

    // Gram-Schmidt with the coefficients of e_a in the coordinate frame.
    let mut e = [ZERO; 2];
    let mut coef = [[0.0; 2]; 2];
    let l0 = norm(&t[0]);
    e[0] = scale(&t[0], 1.0 / l0);
    coef[0][0] = 1.0 / l0;
    if n == 2 {
        let p = dot(&t[1], &e[0]);
        let w = axpy(&t[1], -p, &e[0]);
        let l1 = norm(&w);
        e[1] = scale(&w, 1.0 / l1);
        coef[1] = [-p / (l0 * l1), 1.0 / l1];
    }
    let nu = [complex_j(&e[0], n), complex_j(&e[1], n)];

    let mut sff = [[[0.0; 2]; 2]; 2];
    let mut lap = ZERO;
    let mut hn = [[ZERO; 2]; 2];
    let mut ct = [0.0; 2];
    for i in 0..n {
        for j in 0..n {
            lap = axpy(&lap, ginv[i][j], &hess[i][j]);
            hn[i][j] = normal_part(&hess[i][j], &e, n);
            for a in 0..n {
                sff[a][i][j] = dot(&hess[i][j], &nu[a]);
            }
            for k in 0..n {
                let gamma: f64 = (0..n).map(|l| ginv[k][l] * dot(&hess[i][j], &t[l])).sum();
                ct[k] += ginv[i][j] * gamma;
            }
        }
    }
    let h = normal_part(&lap, &e, n);

    let mut a_sq = 0.0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    a_sq += ginv[i][k] * ginv[j][l] * dot(&hn[i][j], &hn[k][l]);
                }
            }
        }
    }

    let mut sff_on = [[[0.0; 2]; 2]; 2];
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        s += coef[b][i] * coef[c][j] * sff[a][i][j];
                    }
                }
                sff_on[a][b][c] = s;
            }
        }
    }

    // M_kj = z_k-component of dF/du_j.
    let m = |k: usize, j: usize| Complex64::new(t[j][k], t[j][n + k]);
    let frame_det = if n == 1 {
        m(0, 0)
    } else {
        m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0)
    };
    let theta_raw = frame_det.arg();

    Ok(VertexGeometry {
        tangent: *t,
        hessian: *hess,
        metric: g,
        metric_inv: ginv,
        area_element: det.sqrt(),
        orthonormal_tangent: e,
        normal_frame: nu,
        second_fundamental_form: sff,
        sff_orthonormal: sff_on,
        mean_curvature: h,
        norm_a_sq: a_sq,
        christoffel_trace: ct,
        frame_det,
        theta_raw,
        theta: theta_raw,
        cos_theta: theta_raw.cos(),
        grad_theta: ZERO,
        grad_cos_theta: ZERO,
    })
}

/// Continuous branch of an angle field: along the first row from vertex 0,
/// then along every column. Jumps above pi between non-seam neighbors in the
/// cross direction mean the field cannot be unwrapped.
pub fn unwrap_angle(grid: &Grid, raw: &[f64]) -> Result<Vec<f64>> {
    let [n0, n1] = grid.shape;
    let mut th = raw.to_vec();
    for i in 1..n0 {
        let (a, b) = (grid.index(i - 1, 0), grid.index(i, 0));
        th[b] = th[a] + wrap_pi(raw[b] - th[a]);
    }
    for i in 0..n0 {
        for j in 1..n1 {
            let (a, b) = (grid.index(i, j - 1), grid.index(i, j));
            th[b] = th[a] + wrap_pi(raw[b] - th[a]);
        }
    }
    for i in 1..n0 {
        for j in 1..n1 {
            let (a, b) = (grid.index(i - 1, j), grid.index(i, j));
            let jump = th[b] - th[a];
            if jump.abs() > PI {
                return Err(Error::AngleUnwrap { a, b, jump });
            }
        }
    }
    Ok(th)
}

/// Shift `theta` by a global multiple of 2pi towards `reference`.
pub fn align_branch(theta: &mut [f64], reference: impl Iterator<Item = f64>) -> Result<()> {
    let r: Vec<f64> = reference.collect();
    let mean = theta.iter().zip(&r).map(|(t, r)| r - t).sum::<f64>() / theta.len() as f64;
    let shift = TAU * (mean / TAU).round();
    let mut worst: f64 = 0.0;
    for (t, r) in theta.iter_mut().zip(&r) {
        *t += shift;
        worst = worst.max((*t - r).abs());
    }
    if worst > PI {
        return Err(Error::BranchMismatch(worst));
    }
    Ok(())
}

impl GeometryCache {
    pub fn n(&self) -> usize {
        self.grid.n
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Quadrature weights sqrt(det g) times the parametric cell.
    pub fn weights(&self) -> Vec<f64> {
        let c = self.grid.cell();
        self.vertices.iter().map(|v| v.area_element * c).collect()
    }

    pub fn volume(&self) -> f64 {
        let c = self.grid.cell();
        self.vertices.iter().map(|v| v.area_element).sum::<f64>() * c
    }

    pub fn max_norm_a_sq(&self) -> f64 {
        self.vertices
            .iter()
            .map(|v| v.norm_a_sq)
            .fold(0.0, f64::max)
    }

    pub fn max_mean_curvature(&self) -> f64 {
        self.vertices
            .iter()
            .map(|v| norm(&v.mean_curvature))
            .fold(0.0, f64::max)
    }

    pub fn min_cos_theta(&self) -> f64 {
        self.vertices
            .iter()
            .map(|v| v.cos_theta)
            .fold(f64::INFINITY, f64::min)
    }

    /// Smallest ambient edge length: min parametric spacing times the square
    /// root of the smallest metric eigenvalue over all vertices.
    pub fn h_min(&self) -> f64 {
        let n = self.n();
        let hp = self.grid.spacing[..n]
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let lam = self
            .vertices
            .iter()
            .map(|v| {
                let g = v.metric;
                if n == 1 {
                    g[0][0]
                } else {
                    let tr = g[0][0] + g[1][1];
                    let disc = ((g[0][0] - g[1][1]).powi(2) + 4.0 * g[0][1] * g[0][1]).sqrt();
                    0.5 * (tr - disc)
                }
            })
            .fold(f64::INFINITY, f64::min);
        hp * lam.sqrt()
    }

    /// Laplace-Beltrami operator of a single-valued scalar field.
    pub fn laplacian(&self, field: &[f64]) -> Vec<f64> {
        self.laplacian_by(|idx, k| field[k] - field[idx])
    }

    /// Laplace-Beltrami operator of the Lagrangian angle, using wrapped
    /// differences so seams are invisible.
    pub fn laplacian_theta(&self) -> Vec<f64> {
        self.laplacian_by(|idx, k| {
            wrap_pi(self.vertices[k].theta_raw - self.vertices[idx].theta_raw)
        })
    }

    fn laplacian_by<F>(&self, diff: F) -> Vec<f64>
    where
        F: Fn(usize, usize) -> f64 + Sync,
    {
        let n = self.n();
        (0..self.len())
            .into_par_iter()
            .with_min_len(PAR_CHUNK)
            .map(|idx| {
                let v = &self.vertices[idx];
                let (d1, d2) = self.grid.scalar_derivs(self.stencil, idx, |k| diff(idx, k));
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        s += v.metric_inv[i][j] * d2[i][j];
                    }
                    s -= v.christoffel_trace[i] * d1[i];
                }
                s
            })
            .collect()
    }

    /// Largest |<J e_a, e_b>| over vertices: zero when J maps tangent
    /// vectors to normal vectors.
    pub fn tangent_normal_defect(&self) -> f64 {
        let n = self.n();
        let mut worst: f64 = 0.0;
        for v in &self.vertices {
            for a in 0..n {
                for b in 0..n {
                    worst = worst.max(dot(&v.normal_frame[a], &v.orthonormal_tangent[b]).abs());
                }
            }
        }
        worst
    }

    /// Largest |e^{i theta} sqrt(det g) - det M| over vertices.
    pub fn frame_det_defect(&self) -> f64 {
        self.vertices
            .iter()
            .map(|v| (Complex64::from_polar(v.area_element, v.theta) - v.frame_det).norm())
            .fold(0.0, f64::max)
    }

    /// Largest tangential component of H relative to max |H|.
    pub fn mean_curvature_tangential_defect(&self) -> f64 {
        let n = self.n();
        self.vertices
            .iter()
            .map(|v| {
                let t: f64 = (0..n)
                    .map(|a| dot(&v.mean_curvature, &v.orthonormal_tangent[a]).powi(2))
                    .sum();
                t.sqrt()
            })
            .fold(0.0, f64::max)
    }
}

/// Largest |omega(dF/du_i, dF/du_j)| over vertices and index pairs, with
/// second-order central tangents.
pub fn lagrangian_residual(im: &Immersion) -> Result<f64> {
    let grid = im.grid();
    let n = grid.n;
    let shifts = [im.seam_shift(0), im.seam_shift(1)];
    let mut worst: f64 = 0.0;
    for idx in 0..grid.len() {
        let (i, j) = grid.coords(idx);
        let mut t = [ZERO; 2];
        for (d, td) in t.iter_mut().enumerate().take(n) {
            let (o1, o2) = if d == 0 { (1, 0) } else { (0, 1) };
            let (kp, wp) = grid.neighbor(i, j, o1, o2);
            let (km, wm) = grid.neighbor(i, j, -o1, -o2);
            *td = sub(&im.lifted(kp, wp, &shifts), &im.lifted(km, wm, &shifts));
        }
        let a = norm_sq(&t[0]);
        let degenerate = if n == 1 {
            a == 0.0
        } else {
            let b = norm_sq(&t[1]);
            let c = dot(&t[0], &t[1]);
            !(a * b - c * c > 1e-12 * a * b)
        };
        if degenerate {
            return Err(Error::DegenerateFrame { vertex: idx });
        }
        if n == 2 {
            let scale = 1.0 / (4.0 * grid.spacing[0] * grid.spacing[1]);
            worst = worst.max((omega(&t[0], &t[1], n) * scale).abs());
        }
    }
    Ok(worst)
}

/// Relative L^2 norm of H - J grad(theta); the absolute norm when H = 0.
pub fn angle_gradient_residual(geo: &GeometryCache) -> f64 {
    let n = geo.n();
    let w = geo.weights();
    let mut num = 0.0;
    let mut den = 0.0;
    for (v, w) in geo.vertices.iter().zip(&w) {
        let jg = complex_j(&v.grad_theta, n);
        num += w * norm_sq(&sub(&v.mean_curvature, &jg));
        den += w * norm_sq(&v.mean_curvature);
    }
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    }
}
