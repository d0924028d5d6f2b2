//! Independent reference computations shared by the integration tests and
//! the acceptance harness. Nothing here goes through the reduced coordinates.

#![allow(dead_code)]

use num_complex::Complex64;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Newtonian accelerations `q_i'' = sum_j m_j (q_j - q_i)/|q_j - q_i|^3`.
pub fn newton_accel(masses: &[f64], q: &[Complex64]) -> Vec<Complex64> {
    let n = q.len();
    let mut a = vec![c(0.0, 0.0); n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d = q[j] - q[i];
                a[i] += d * (masses[j] / d.norm().powi(3));
            }
        }
    }
    a
}

/// Classical fixed-step RK4 on the unreduced equations; returns the state at
/// every multiple of `every` steps, including the initial one.
pub fn rk4_newton(
    masses: &[f64],
    q0: &[Complex64],
    p0: &[Complex64],
    h: f64,
    steps: usize,
    every: usize,
) -> Vec<(Vec<Complex64>, Vec<Complex64>)> {
    let n = q0.len();
    let mut q = q0.to_vec();
    let mut p = p0.to_vec();
    let mut out = vec![(q.clone(), p.clone())];
    let axpy = |x: &[Complex64], y: &[Complex64], s: f64| -> Vec<Complex64> {
        x.iter().zip(y).map(|(a, b)| a + b * s).collect()
    };
    for step in 1..=steps {
        let k1q = p.clone();
        let k1p = newton_accel(masses, &q);
        let q2 = axpy(&q, &k1q, 0.5 * h);
        let p2 = axpy(&p, &k1p, 0.5 * h);
        let k2q = p2.clone();
        let k2p = newton_accel(masses, &q2);
        let q3 = axpy(&q, &k2q, 0.5 * h);
        let p3 = axpy(&p, &k2p, 0.5 * h);
        let k3q = p3.clone();
        let k3p = newton_accel(masses, &q3);
        let q4 = axpy(&q, &k3q, h);
        let p4 = axpy(&p, &k3p, h);
        let k4q = p4;
        let k4p = newton_accel(masses, &q4);
        for i in 0..n {
            q[i] += (k1q[i] + k2q[i] * 2.0 + k3q[i] * 2.0 + k4q[i]) * (h / 6.0);
            p[i] += (k1p[i] + k2p[i] * 2.0 + k3p[i] * 2.0 + k4p[i]) * (h / 6.0);
        }
        if step % every == 0 {
            out.push((q.clone(), p.clone()));
        }
    }
    out
}

/// `U(q) sqrt(I(q))` with I about the center of mass; scale and rotation
/// invariant.
pub fn normalized_potential(masses: &[f64], q: &[Complex64]) -> f64 {
    let mtot: f64 = masses.iter().sum();
    let com: Complex64 = q.iter().zip(masses).map(|(x, m)| x * m).sum::<Complex64>() / mtot;
    let inertia: f64 = q.iter().zip(masses).map(|(x, m)| m * (x - com).norm_sqr()).sum();
    let mut u = 0.0;
    for i in 0..q.len() {
        for j in (i + 1)..q.len() {
            u += masses[i] * masses[j] / (q[i] - q[j]).norm();
        }
    }
    u * inertia.sqrt()
}

/// Golden-section minimization of a unimodal function on `[a, b]`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > tol {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        }
    }
    0.5 * (a + b)
}

/// Minimum of `U sqrt(I)` over collinear configurations with the bodies in
/// the given order; the minimizer is the Euler central configuration.
pub fn euler_value(masses: &[f64], order: [usize; 3]) -> f64 {
    let conf = |x: f64| {
        let mut q = vec![c(0.0, 0.0); 3];
        q[order[0]] = c(0.0, 0.0);
        q[order[1]] = c(x, 0.0);
        q[order[2]] = c(1.0, 0.0);
        q
    };
    let x = golden_section(|x| normalized_potential(masses, &conf(x)), 1e-6, 1.0 - 1e-6, 1e-13);
    normalized_potential(masses, &conf(x))
}

/// Equilateral triangle with unit sides.
pub fn equilateral() -> Vec<Complex64> {
    let r = 1.0 / 3f64.sqrt();
    (0..3)
        .map(|k| Complex64::from_polar(r, 2.0 * std::f64::consts::PI * k as f64 / 3.0))
        .collect()
}

/// Angle difference reduced to `(-pi, pi]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * std::f64::consts::PI);
    if d > std::f64::consts::PI { d - 2.0 * std::f64::consts::PI } else { d }
}
