//! Size/rotation/shape chart `z = r e^{i theta} (s,1)/||(s,1)||`, the
//! Fubini-Study metric on the affine shape chart, angular momentum and the
//! Saari splitting of velocities.
//!
//! All vectors are in mass-orthonormal coordinates, so the Hermitian mass
//! product is the standard one. Shape vectors `s`, `omega` have n - 2 complex
//! components; matrices act on their interleaved real layout.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::layout::{hermitian, norm_sq, rotate_quarter, to_real};

#[derive(Debug, Clone, PartialEq)]
pub struct ShapePoint {
    pub r: f64,
    /// Unwrapped rotation angle (not reduced mod 2 pi).
    pub theta: f64,
    pub s: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeVelocity {
    pub rho: f64,
    pub theta_dot: f64,
    pub omega: Vec<Complex64>,
}

/// Mass-orthogonal components of a velocity attached at a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SaariSplit {
    pub scaling: Vec<Complex64>,
    pub rotation: Vec<Complex64>,
    pub pure_shape: Vec<Complex64>,
}

/// `||(s,1)||^2 = |s|^2 + 1`.
pub fn affine_norm_sq(s: &[Complex64]) -> f64 {
    norm_sq(s) + 1.0
}

/// `<<(s,1), (omega,0)>>`; its real part is G and its imaginary part is Omega.
pub fn shape_product(s: &[Complex64], omega: &[Complex64]) -> Complex64 {
    hermitian(s, omega)
}

pub fn g_form(s: &[Complex64], omega: &[Complex64]) -> f64 {
    shape_product(s, omega).re
}

pub fn omega_form(s: &[Complex64], omega: &[Complex64]) -> f64 {
    shape_product(s, omega).im
}

/// Squared Fubini-Study norm of `omega` at `s`.
pub fn fs_norm_sq(s: &[Complex64], omega: &[Complex64]) -> f64 {
    let n = affine_norm_sq(s);
    let p = shape_product(s, omega);
    ((n * norm_sq(omega) - p.norm_sqr()) / (n * n)).max(0.0)
}

/// Spin rate of a zero angular momentum motion, `-Omega(s, omega)/||(s,1)||^2`.
pub fn spin_rate(s: &[Complex64], omega: &[Complex64]) -> f64 {
    -omega_form(s, omega) / affine_norm_sq(s)
}

/// Real matrix A(s) of the Fubini-Study metric with its Cholesky factor.
#[derive(Debug, Clone)]
pub struct FsMetric {
    s: DVector<f64>,
    js: DVector<f64>,
    n: f64,
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

pub fn fs_matrix(s: &[Complex64]) -> FsMetric {
    FsMetric::new(s)
}

impl FsMetric {
    pub fn new(s: &[Complex64]) -> Self {
        let sr = to_real(s);
        let js = rotate_quarter(sr.as_slice());
        let n = affine_norm_sq(s);
        let dim = sr.len();
        let matrix = DMatrix::<f64>::identity(dim, dim) / n
            - (&sr * sr.transpose() + &js * js.transpose()) / (n * n);
        let chol = matrix
            .clone()
            .cholesky()
            .expect("Fubini-Study matrix is positive definite");
        Self {
            s: sr,
            js,
            n,
            matrix,
            chol,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    pub fn dim(&self) -> usize {
        self.s.len()
    }

    /// `omega^T A omega` for a real-layout vector.
    pub fn quad(&self, omega: &DVector<f64>) -> f64 {
        omega.dot(&(&self.matrix * omega))
    }

    /// `A^-1 rhs`.
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    /// Directional derivative `DA(s)(delta)`.
    pub fn derivative(&self, delta: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n;
        let dn = 2.0 * self.s.dot(delta);
        let jd = rotate_quarter(delta.as_slice());
        let dim = self.dim();
        let outer = &self.s * self.s.transpose() + &self.js * self.js.transpose();
        let d_outer = delta * self.s.transpose()
            + &self.s * delta.transpose()
            + &jd * self.js.transpose()
            + &self.js * jd.transpose();
        DMatrix::<f64>::identity(dim, dim) * (-dn / (n * n)) - d_outer / (n * n)
            + outer * (2.0 * dn / (n * n * n))
    }

    /// Euclidean gradient with respect to `s` of `F(s, omega)` at fixed `omega`.
    pub fn grad_f(&self, omega: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        let g = self.s.dot(omega);
        let om = self.js.dot(omega);
        let jw = rotate_quarter(omega.as_slice());
        let w2 = omega.norm_squared();
        &self.s * (-2.0 * w2 / (n * n) + 4.0 * (g * g + om * om) / (n * n * n))
            - (omega * g - jw * om) * (2.0 / (n * n))
    }

    /// Sorted eigenvalues of A(s).
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.matrix.clone().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    /// Fubini-Study operator norm of the spin functional `omega -> -Omega(s,omega)/||(s,1)||^2`.
    pub fn spin_bound(&self) -> f64 {
        let b = &self.js / self.n;
        b.dot(&self.solve(&b)).max(0.0).sqrt()
    }
}

/// The constant K(s) in `|theta'| <= K ||w||_FS`.
pub fn spin_bound_constant(s: &[Complex64]) -> f64 {
    FsMetric::new(s).spin_bound()
}

pub fn to_chart(u: &[Complex64]) -> Result<ShapePoint> {
    let k = u.len();
    if k == 0 {
        return Err(Error::Dimension { expected: 1, got: 0 });
    }
    let r = norm_sq(u).sqrt();
    let last = u[k - 1];
    if !(last.norm() > f64::EPSILON * r) {
        return Err(Error::Chart(format!(
            "last coordinate {last} vanishes relative to size {r:e}"
        )));
    }
    let s: Vec<Complex64> = u[..k - 1].iter().map(|c| c / last).collect();
    Ok(ShapePoint {
        r,
        theta: last.arg(),
        s,
    })
}

pub fn from_chart(p: &ShapePoint) -> Vec<Complex64> {
    let scale = Complex64::from_polar(p.r / affine_norm_sq(&p.s).sqrt(), p.theta);
    p.s
        .iter()
        .chain(std::iter::once(&Complex64::new(1.0, 0.0)))
        .map(|c| c * scale)
        .collect()
}

/// Angular momentum `J(z, zeta) = Im <<z, zeta>>`.
pub fn angular_momentum(u: &[Complex64], zeta: &[Complex64]) -> f64 {
    hermitian(u, zeta).im
}

pub fn saari_decompose(u: &[Complex64], v: &[Complex64]) -> Result<SaariSplit> {
    if u.len() != v.len() {
        return Err(Error::Dimension {
            expected: u.len(),
            got: v.len(),
        });
    }
    let inertia = norm_sq(u);
    if inertia == 0.0 {
        return Err(Error::Degenerate("Saari splitting at z = 0".into()));
    }
    let p = hermitian(u, v);
    let a = p.re / inertia;
    let b = p.im / inertia;
    let scaling: Vec<Complex64> = u.iter().map(|c| c * a).collect();
    let rotation: Vec<Complex64> = u.iter().map(|c| c * Complex64::new(0.0, b)).collect();
    let pure_shape = v
        .iter()
        .zip(scaling.iter().zip(&rotation))
        .map(|(x, (sc, ro))| x - sc - ro)
        .collect();
    Ok(SaariSplit {
        scaling,
        rotation,
        pure_shape,
    })
}

/// Chart coordinates and chart velocities of `(u, zeta)`.
pub fn velocity_to_chart(u: &[Complex64], zeta: &[Complex64]) -> Result<(ShapePoint, ShapeVelocity)> {
    if u.len() != zeta.len() {
        return Err(Error::Dimension {
            expected: u.len(),
            got: zeta.len(),
        });
    }
    let p = to_chart(u)?;
    let k = u.len();
    let last = u[k - 1];
    let dlast = zeta[k - 1];
    let rho = hermitian(u, zeta).re / p.r;
    let theta_dot = (dlast / last).im;
    let omega = (0..k - 1)
        .map(|i| (zeta[i] * last - u[i] * dlast) / (last * last))
        .collect();
    Ok((
        p,
        ShapeVelocity {
            rho,
            theta_dot,
            omega,
        },
    ))
}

/// Reconstructs `zeta = dz/dt` from chart coordinates and velocities.
pub fn chart_velocity(p: &ShapePoint, v: &ShapeVelocity) -> Vec<Complex64> {
    let n = affine_norm_sq(&p.s);
    let k = 1.0 / n.sqrt();
    let k_dot = -g_form(&p.s, &v.omega) / (n * n.sqrt());
    let phase = Complex64::from_polar(1.0, p.theta);
    let radial = Complex64::new(v.rho + k_dot * p.r / k, v.theta_dot * p.r) * phase * k;
    let shape = phase * (p.r * k);
    p.s
        .iter()
        .map(|si| radial * si)
        .chain(std::iter::once(radial))
        .zip(v.omega.iter().chain(std::iter::once(&Complex64::new(0.0, 0.0))))
        .map(|(a, w)| a + shape * w)
        .collect()
}
