//! Float helpers backed by `libm` so the crate builds without `std`.

pub(crate) use libm::{exp, fabs as abs, floor, log, sqrt};

#[inline]
pub(crate) fn round(x: f64) -> f64 {
    libm::round(x)
}

#[inline]
pub(crate) fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

#[inline]
pub(crate) fn hypot(x: f64, y: f64) -> f64 {
    libm::hypot(x, y)
}

/// `e^{i theta}` as a complex number.
#[inline]
pub(crate) fn cis(theta: f64) -> num_complex::Complex64 {
    let (s, c) = libm::sincos(theta);
    num_complex::Complex64::new(c, s)
}

#[inline]
pub(crate) fn norm2(p: crate::Point) -> f64 {
    p[0] * p[0] + p[1] * p[1]
}

#[inline]
pub(crate) fn dot(p: crate::Point, q: crate::Point) -> f64 {
    p[0] * q[0] + p[1] * q[1]
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance (divides by `n`).
pub(crate) fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}
