//! Conversions between complex vectors and the interleaved real layout
//! `(re_0, im_0, re_1, im_1, ...)` used for metrics, gradients and ODE states.

use nalgebra::DVector;
use num_complex::Complex64;

pub fn to_real(v: &[Complex64]) -> DVector<f64> {
    DVector::from_iterator(2 * v.len(), v.iter().flat_map(|c| [c.re, c.im]))
}

pub fn from_real(x: &[f64]) -> Vec<Complex64> {
    debug_assert!(x.len() % 2 == 0);
    x.chunks_exact(2)
        .map(|p| Complex64::new(p[0], p[1]))
        .collect()
}

/// Multiplication by `i` in the real layout: `(x, y) -> (-y, x)` per component.
pub fn rotate_quarter(x: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        x.len(),
        x.chunks_exact(2).flat_map(|p| [-p[1], p[0]]),
    )
}

pub fn norm_sq(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum()
}

/// Standard Hermitian product `sum conj(v_i) w_i`.
pub fn hermitian(v: &[Complex64], w: &[Complex64]) -> Complex64 {
    v.iter().zip(w).map(|(a, b)| a.conj() * b).sum()
}
