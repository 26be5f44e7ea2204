//! Fixed-size vector helpers for points of R^{2n}, n <= 2.
//!
//! Every point is stored in a `[f64; 4]`; only the first `2n` entries are
//! meaningful and the rest stay zero, so the full-length operations below are
//! valid in both dimensions.

pub type V4 = [f64; 4];

pub const ZERO: V4 = [0.0; 4];

#[inline]
pub fn dot(a: &V4, b: &V4) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

#[inline]
pub fn norm_sq(a: &V4) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm(a: &V4) -> f64 {
    norm_sq(a).sqrt()
}

#[inline]
pub fn add(a: &V4, b: &V4) -> V4 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]]
}

#[inline]
pub fn sub(a: &V4, b: &V4) -> V4 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]]
}

#[inline]
pub fn scale(a: &V4, s: f64) -> V4 {
    [a[0] * s, a[1] * s, a[2] * s, a[3] * s]
}

/// `a + s * b`
#[inline]
pub fn axpy(a: &V4, s: f64, b: &V4) -> V4 {
    [
        a[0] + s * b[0],
        a[1] + s * b[1],
        a[2] + s * b[2],
        a[3] + s * b[3],
    ]
}

/// Load the first `d` coordinates of a slice.
#[inline]
pub fn load(p: &[f64]) -> V4 {
    let mut v = ZERO;
    v[..p.len()].copy_from_slice(p);
    v
}

/// Standard complex structure on C^n with real coordinates
/// `(x_1, .., x_n, y_1, .., y_n)` and `z_k = x_k + i y_k`.
#[inline]
pub fn complex_j(a: &V4, n: usize) -> V4 {
    let mut out = ZERO;
    for k in 0..n {
        out[k] = -a[n + k];
        out[n + k] = a[k];
    }
    out
}

/// Standard symplectic form `omega = sum dx_k ^ dy_k`, equal to `<J a, b>`.
#[inline]
pub fn omega(a: &V4, b: &V4, n: usize) -> f64 {
    (0..n).map(|k| a[k] * b[n + k] - a[n + k] * b[k]).sum()
}

/// Wrap an angle difference into (-pi, pi].
#[inline]
pub fn wrap_pi(x: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    if x > -PI && x <= PI {
        return x;
    }
    let mut y = x.rem_euclid(TAU);
    if y > PI {
        y -= TAU;
    }
    y
}
