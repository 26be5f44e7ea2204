use nalgebra::{Matrix4, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cloud::{orthonormalize, RescaledCloud};
use super::density::density_ratio;
use crate::error::{Error, Result};
use crate::vector::{axpy, dot, norm, norm_sq, sub, V4, ZERO};

type P4 = [[f64; 4]; 4];

/// Orthogonal projector onto the span of the first n basis vectors.
pub fn projector(b: &[V4; 2], n: usize) -> P4 {
    let mut p = [[0.0; 4]; 4];
    for e in b.iter().take(n) {
        for r in 0..4 {
            for c in 0..4 {
                p[r][c] += e[r] * e[c];
            }
        }
    }
    p
}

pub fn projector_distance(a: &P4, b: &P4) -> f64 {
    let mut s = 0.0;
    for r in 0..4 {
        for c in 0..4 {
            s += (a[r][c] - b[r][c]).powi(2);
        }
    }
    s.sqrt()
}

fn apply(p: &P4, v: &V4) -> V4 {
    let mut o = ZERO;
    for r in 0..4 {
        o[r] = (0..4).map(|c| p[r][c] * v[c]).sum();
    }
    o
}

/// Largest principal angle between two n-planes given by orthonormal bases.
pub fn principal_angle(a: &[V4; 2], b: &[V4; 2], n: usize) -> f64 {
    let pa = projector(a, n);
    // columns of (I - P_a) B; the largest singular value is the sine
    let r: Vec<V4> = b.iter().take(n).map(|e| sub(e, &apply(&pa, e))).collect();
    let s2 = if n == 1 {
        norm_sq(&r[0])
    } else {
        let (g00, g01, g11) = (norm_sq(&r[0]), dot(&r[0], &r[1]), norm_sq(&r[1]));
        let tr = g00 + g11;
        0.5 * (tr + ((g00 - g11).powi(2) + 4.0 * g01 * g01).sqrt())
    };
    s2.sqrt().min(1.0).asin()
}

/// Top-n eigenvectors of a symmetric matrix, sign-normalized so the
/// entry of largest magnitude is positive.
fn top_eigenvectors(m: &P4, n: usize) -> [V4; 2] {
    let mat = Matrix4::from_fn(|r, c| m[r][c]);
    let eig = SymmetricEigen::new(mat);
    let mut idx: Vec<usize> = (0..4).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut out = [ZERO; 2];
    for k in 0..n {
        let col = eig.eigenvectors.column(idx[k]);
        let mut v = [col[0], col[1], col[2], col[3]];
        let big = (0..4)
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()))
            .unwrap_or(0);
        if v[big] < 0.0 {
            v = crate::vector::scale(&v, -1.0);
        }
        out[k] = v;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitParams {
    /// Frobenius projector distance for joining a cluster.
    pub threshold: f64,
    /// Run the RANSAC fallback when more than this fraction is unassigned.
    pub ransac_trigger: f64,
    /// Clusters below this weight fraction are dissolved.
    pub min_cluster_fraction: f64,
    /// Multiplicity is the rounded density ratio at radius / 2.
    pub radius: f64,
    pub refine_iterations: usize,
    pub ransac_iterations: usize,
    /// Point-to-plane distance for RANSAC inliers, relative to `radius`.
    pub ransac_tolerance: f64,
    pub max_planes: usize,
    pub seed: u64,
}

impl Default for FitParams {
    fn default() -> Self {
        FitParams {
            threshold: 0.2,
            ransac_trigger: 0.1,
            min_cluster_fraction: 0.05,
            radius: 1.0,
            refine_iterations: 10,
            ransac_iterations: 256,
            ransac_tolerance: 1e-2,
            max_planes: 8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneRecord {
    /// Orthonormal basis, each vector of length 2n.
    pub basis: Vec<Vec<f64>>,
    pub multiplicity: u32,
    /// Weighted circular mean of the carried angles.
    pub mean_theta: f64,
    /// Weighted RMS distance of the members to the plane.
    pub residual: f64,
    pub weight_fraction: f64,
}

impl PlaneRecord {
    pub fn basis_v4(&self) -> [V4; 2] {
        let mut b = [ZERO; 2];
        for (k, v) in self.basis.iter().enumerate().take(2) {
            b[k] = crate::vector::load(v);
        }
        b
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    Greedy,
    Ransac,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneCluster {
    pub n: usize,
    pub planes: Vec<PlaneRecord>,
    pub unassigned_fraction: f64,
    /// Weighted RMS distance of all samples to their nearest fitted plane
    /// (to the origin when no plane was found).
    pub residual: f64,
    pub method: FitMethod,
    /// Plane index per sample, if assigned.
    #[serde(skip)]
    pub labels: Vec<Option<usize>>,
}

fn total_weight(c: &RescaledCloud) -> f64 {
    c.weights.iter().sum()
}

fn dist_to_plane(x: &V4, b: &[V4; 2], n: usize) -> f64 {
    let mut r = *x;
    for e in b.iter().take(n) {
        r = axpy(&r, -dot(x, e), e);
    }
    norm(&r)
}

/// Weighted PCA plane through the origin of the given members.
fn fit_members(cloud: &RescaledCloud, members: &[usize]) -> [V4; 2] {
    let mut m = [[0.0; 4]; 4];
    for &k in members {
        let (x, w) = (&cloud.points[k], cloud.weights[k]);
        for r in 0..4 {
            for c in 0..4 {
                m[r][c] += w * x[r] * x[c];
            }
        }
    }
    top_eigenvectors(&m, cloud.n)
}

fn labels_to_members(labels: &[Option<usize>], k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); k];
    for (i, l) in labels.iter().enumerate() {
        if let Some(c) = l {
            out[*c].push(i);
        }
    }
    out
}

/// Drop clusters lighter than the minimum fraction and renumber.
fn prune(cloud: &RescaledCloud, labels: &mut [Option<usize>], k: usize, min_frac: f64) -> usize {
    let total = total_weight(cloud);
    let mut mass = vec![0.0; k];
    for (i, l) in labels.iter().enumerate() {
        if let Some(c) = l {
            mass[*c] += cloud.weights[i];
        }
    }
    let mut map = vec![None; k];
    let mut next = 0;
    for c in 0..k {
        if mass[c] >= min_frac * total {
            map[c] = Some(next);
            next += 1;
        }
    }
    for l in labels.iter_mut() {
        *l = l.and_then(|c| map[c]);
    }
    next
}

fn greedy(cloud: &RescaledCloud, p: &FitParams) -> (Vec<Option<usize>>, usize) {
    let n = cloud.n;
    let projs: Vec<P4> = cloud
        .tangent_planes
        .iter()
        .map(|b| projector(b, n))
        .collect();
    let mut centers: Vec<P4> = Vec::new();
    let mut labels = vec![None; cloud.len()];
    for (i, q) in projs.iter().enumerate() {
        let best = centers
            .iter()
            .enumerate()
            .map(|(c, z)| (c, projector_distance(q, z)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((c, d)) if d < p.threshold => labels[i] = Some(c),
            _ => {
                labels[i] = Some(centers.len());
                centers.push(*q);
            }
        }
    }
    let mut k = prune(cloud, &mut labels, centers.len(), p.min_cluster_fraction);
    for _ in 0..p.refine_iterations {
        // recenter on the mean projector, rounded back to rank n
        let members = labels_to_members(&labels, k);
        let centers: Vec<P4> = members
            .iter()
            .map(|m| {
                let mut acc = [[0.0; 4]; 4];
                for &i in m {
                    for r in 0..4 {
                        for c in 0..4 {
                            acc[r][c] += cloud.weights[i] * projs[i][r][c];
                        }
                    }
                }
                projector(&top_eigenvectors(&acc, n), n)
            })
            .collect();
        let mut next: Vec<Option<usize>> = projs
            .iter()
            .map(|q| {
                centers
                    .iter()
                    .enumerate()
                    .map(|(c, z)| (c, projector_distance(q, z)))
                    .filter(|(_, d)| *d < p.threshold)
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(c, _)| c)
            })
            .collect();
        let k2 = prune(cloud, &mut next, k, p.min_cluster_fraction);
        let done = next == labels && k2 == k;
        labels = next;
        k = k2;
        if done {
            break;
        }
    }
    (labels, k)
}

fn ransac(cloud: &RescaledCloud, p: &FitParams) -> (Vec<Option<usize>>, usize) {
    let n = cloud.n;
    let total = total_weight(cloud);
    let tol = p.ransac_tolerance * p.radius;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut labels = vec![None; cloud.len()];
    let mut k = 0;
    let usable: Vec<usize> = (0..cloud.len())
        .filter(|&i| norm(&cloud.points[i]) > tol)
        .collect();
    if usable.len() < n {
        return (labels, 0);
    }
    while k < p.max_planes {
        let free: Vec<usize> = usable
            .iter()
            .cloned()
            .filter(|&i| labels[i].is_none())
            .collect();
        if free.len() < n {
            break;
        }
        let mut best: Option<([V4; 2], f64)> = None;
        for _ in 0..p.ransac_iterations {
            let mut b = [ZERO; 2];
            for slot in b.iter_mut().take(n) {
                *slot = cloud.points[free[rng.random_range(0..free.len())]];
            }
            let Ok(e) = orthonormalize(&b, n) else {
                continue;
            };
            let mass: f64 = (0..cloud.len())
                .filter(|&i| labels[i].is_none() && dist_to_plane(&cloud.points[i], &e, n) <= tol)
                .map(|i| cloud.weights[i])
                .sum();
            if best.as_ref().is_none_or(|(_, m)| mass > *m) {
                best = Some((e, mass));
            }
        }
        match best {
            Some((e, mass)) if mass >= p.min_cluster_fraction * total => {
                for i in 0..cloud.len() {
                    if labels[i].is_none() && dist_to_plane(&cloud.points[i], &e, n) <= tol {
                        labels[i] = Some(k);
                    }
                }
                k += 1;
            }
            _ => break,
        }
    }
    (labels, k)
}

fn unassigned(cloud: &RescaledCloud, labels: &[Option<usize>]) -> f64 {
    let total = total_weight(cloud);
    let free: f64 = labels
        .iter()
        .zip(&cloud.weights)
        .filter(|(l, _)| l.is_none())
        .map(|(_, w)| w)
        .sum();
    free / total
}

/// Cluster samples by tangent plane (projector distance), fit each cluster a
/// plane through the origin by weighted PCA, and attach multiplicity, mean
/// angle and residual. Falls back to RANSAC on positions when too much of
/// the cloud stays unassigned; the variant with fewer unassigned samples
/// is kept.
pub fn fit_planes(cloud: &RescaledCloud, params: &FitParams) -> Result<PlaneCluster> {
    if !matches!(cloud.n, 1 | 2) {
        return Err(Error::Dimension {
            expected: "1 or 2".into(),
            got: cloud.n,
        });
    }
    if cloud.is_empty() {
        return Err(Error::EmptyBall);
    }
    cloud.validate()?;
    let (mut labels, mut k) = greedy(cloud, params);
    let mut method = FitMethod::Greedy;
    if unassigned(cloud, &labels) > params.ransac_trigger {
        let (l2, k2) = ransac(cloud, params);
        if unassigned(cloud, &l2) < unassigned(cloud, &labels) {
            labels = l2;
            k = k2;
            method = FitMethod::Ransac;
        }
    }
    let n = cloud.n;
    let total = total_weight(cloud);
    let members = labels_to_members(&labels, k);
    let mut planes = Vec::with_capacity(k);
    for m in &members {
        let b = fit_members(cloud, m);
        let sub_cloud = cloud.select(m);
        let eta = density_ratio(&sub_cloud, &[0.0; 4][..2 * n], &[params.radius / 2.0])
            .map(|r| r[0].round().max(1.0) as u32)
            .unwrap_or(1);
        let w: f64 = m.iter().map(|&i| cloud.weights[i]).sum();
        let (s, c) = m.iter().fold((0.0, 0.0), |(s, c), &i| {
            (
                s + cloud.weights[i] * cloud.theta[i].sin(),
                c + cloud.weights[i] * cloud.theta[i].cos(),
            )
        });
        let res = (m
            .iter()
            .map(|&i| cloud.weights[i] * dist_to_plane(&cloud.points[i], &b, n).powi(2))
            .sum::<f64>()
            / w)
            .sqrt();
        planes.push(PlaneRecord {
            basis: b.iter().take(n).map(|v| v[..2 * n].to_vec()).collect(),
            multiplicity: eta,
            mean_theta: s.atan2(c),
            residual: res,
            weight_fraction: w / total,
        });
    }
    let bases: Vec<[V4; 2]> = planes.iter().map(|p| p.basis_v4()).collect();
    let residual = ((0..cloud.len())
        .map(|i| {
            let d = bases
                .iter()
                .map(|b| dist_to_plane(&cloud.points[i], b, n))
                .fold(norm(&cloud.points[i]), f64::min);
            cloud.weights[i] * d * d
        })
        .sum::<f64>()
        / total)
        .sqrt();
    Ok(PlaneCluster {
        n,
        planes,
        unassigned_fraction: unassigned(cloud, &labels),
        residual,
        method,
        labels,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AngleParams {
    pub ball_radius: f64,
    /// Centers are drawn from samples inside B_R(0).
    pub radius: f64,
    pub max_centers: usize,
}

impl Default for AngleParams {
    fn default() -> Self {
        AngleParams {
            ball_radius: 0.25,
            radius: 1.0,
            max_centers: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleConstancy {
    /// max - min over sampled balls of the weighted mean of cos theta.
    pub oscillation: f64,
    /// Integral of |grad cos theta| over B_R(0).
    pub gradient_integral: f64,
    /// oscillation / gradient_integral when the integral is positive.
    pub constant: Option<f64>,
    pub centers: usize,
}

/// Oscillation of ball averages of cos theta against the integral of its
/// gradient.
pub fn angle_constancy(cloud: &RescaledCloud, params: &AngleParams) -> Result<AngleConstancy> {
    let surf = cloud.surface();
    let inside: Vec<usize> = (0..cloud.len())
        .filter(|&i| norm(&cloud.points[i]) <= params.radius)
        .collect();
    if inside.is_empty() {
        return Err(Error::EmptyBall);
    }
    let stride = inside.len().div_ceil(params.max_centers.max(1));
    let centers: Vec<V4> = inside
        .iter()
        .step_by(stride)
        .map(|&i| cloud.points[i])
        .collect();
    let mut imgs = Vec::new();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for c in &centers {
        let (mut sw, mut sv) = (0.0, 0.0);
        for (k, s) in surf.samples.iter().enumerate() {
            surf.images(&s.point, c, params.ball_radius, &mut imgs);
            let m = imgs.len() as f64;
            sw += s.weight * m;
            sv += s.weight * m * cloud.cos_theta[k];
        }
        if sw > 0.0 {
            lo = lo.min(sv / sw);
            hi = hi.max(sv / sw);
        }
    }
    let mut grad = 0.0;
    for s in &surf.samples {
        surf.images(&s.point, &ZERO, params.radius, &mut imgs);
        grad += s.weight * imgs.len() as f64 * norm(&s.grad_cos_theta);
    }
    let osc = hi - lo;
    Ok(AngleConstancy {
        oscillation: osc,
        gradient_integral: grad,
        constant: (grad > 0.0).then(|| osc / grad),
        centers: centers.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessReport {
    /// Common value c of cos theta on the planes.
    pub cos_theta: f64,
    /// J* in (x1, x2, y1, y2) coordinates; columns are images of the basis.
    pub j_star: P4,
    /// J' = J* on the (x1, y1) plane and -J* on the (x2, y2) plane.
    pub j_prime: P4,
    /// |(I - P) J' P| per plane (Frobenius).
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    pub invariant: bool,
}

pub const WITNESS_TOLERANCE: f64 = 1e-6;

/// Build J* from the common cos theta = c of the fitted planes,
/// J*(dx1) = c dy1, J*(dy1) = -dx1 / c, J*(dx2) = dy2 / c, J*(dy2) = -c dx2,
/// flip it on the second factor to get J', and test every plane for
/// J'-invariance.
pub fn complex_structure_witness(
    cluster: &PlaneCluster,
    angle_tolerance: f64,
) -> Result<WitnessReport> {
    if cluster.n != 2 {
        return Err(Error::Dimension {
            expected: "2".into(),
            got: cluster.n,
        });
    }
    if cluster.planes.is_empty() {
        return Err(Error::InvalidParameter("no planes to test".into()));
    }
    let cs: Vec<f64> = cluster.planes.iter().map(|p| p.mean_theta.cos()).collect();
    let (lo, hi) = cs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        });
    if hi - lo > angle_tolerance {
        return Err(Error::AngleMismatch(format!(
            "cos theta ranges over [{lo}, {hi}], tolerance {angle_tolerance}"
        )));
    }
    let c = cs.iter().sum::<f64>() / cs.len() as f64;
    if !(c > 0.0) {
        return Err(Error::AngleMismatch(format!(
            "common cos theta {c} is not positive"
        )));
    }
    // (x1, x2, y1, y2) = indices (0, 1, 2, 3); entry [row][col]
    let mut j_star = [[0.0; 4]; 4];
    j_star[2][0] = c;
    j_star[0][2] = -1.0 / c;
    j_star[3][1] = 1.0 / c;
    j_star[1][3] = -c;
    let mut j_prime = j_star;
    j_prime[3][1] = -j_star[3][1];
    j_prime[1][3] = -j_star[1][3];
    let residuals: Vec<f64> = cluster
        .planes
        .iter()
        .map(|pl| {
            let b = pl.basis_v4();
            let p = projector(&b, 2);
            b.iter()
                .map(|e| {
                    let je = apply(&j_prime, e);
                    norm_sq(&sub(&je, &apply(&p, &je)))
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let max_residual = residuals.iter().cloned().fold(0.0, f64::max);
    Ok(WitnessReport {
        cos_theta: c,
        j_star,
        j_prime,
        residuals,
        max_residual,
        invariant: max_residual < WITNESS_TOLERANCE,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatnessReport {
    /// (integral over B_R of |A|^2)^{1/2}
    pub a_l2: f64,
    /// Area-weighted mean of |A|^2 over B_R.
    pub mean_a_sq: f64,
    /// Area-weighted mean over B_R of sum_a |det h^a|.
    pub det_stat: f64,
    /// `det_stat` restricted to each fitted plane's members.
    pub per_plane_det: Vec<f64>,
}

fn det_sum(h: &[[[f64; 2]; 2]; 2], n: usize) -> f64 {
    (0..n)
        .map(|a| {
            if n == 1 {
                h[a][0][0].abs()
            } else {
                (h[a][0][0] * h[a][1][1] - h[a][0][1] * h[a][1][0]).abs()
            }
        })
        .sum()
}

/// Curvature statistics over B_R(0); all vanish on unions of planes.
pub fn flatness_check(
    cloud: &RescaledCloud,
    radius: f64,
    cluster: Option<&PlaneCluster>,
) -> Result<FlatnessReport> {
    let surf = cloud.surface();
    let n = cloud.n;
    let mut imgs = Vec::new();
    let (mut area, mut a2, mut det) = (0.0, 0.0, 0.0);
    let k = cluster.map(|c| c.planes.len()).unwrap_or(0);
    let mut per = vec![(0.0, 0.0); k];
    for (i, s) in surf.samples.iter().enumerate() {
        surf.images(&s.point, &ZERO, radius, &mut imgs);
        let m = imgs.len() as f64 * s.weight;
        if m == 0.0 {
            continue;
        }
        let d = det_sum(&cloud.sff[i], n);
        area += m;
        a2 += m * cloud.norm_a_sq[i];
        det += m * d;
        if let Some(Some(l)) = cluster.and_then(|c| c.labels.get(i)) {
            per[*l].0 += m;
            per[*l].1 += m * d;
        }
    }
    if area == 0.0 {
        return Err(Error::EmptyBall);
    }
    Ok(FlatnessReport {
        a_l2: a2.sqrt(),
        mean_a_sq: a2 / area,
        det_stat: det / area,
        per_plane_det: per
            .iter()
            .map(|(a, d)| if *a > 0.0 { d / a } else { 0.0 })
            .collect(),
    })
}
