//! Mass metric on the translation-reduced configuration space and the
//! Newtonian potential.
//!
//! Reduced configurations are always stored in mass-orthonormal complex
//! coordinates `u in C^(n-1)`, for which the Hermitian mass metric is the
//! standard one, `<<v, w>> = sum conj(v_i) w_i`. The underlying reduction is
//! `z_i = q_i - q_n`, followed by the change of basis `z = C u` with
//! `C = L^-T` where `M = L L^T` is the Cholesky factorization of the mass
//! matrix.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{hermitian, norm_sq, to_real};

/// Relative distance below which two bodies are treated as colliding.
pub const COLLISION_GUARD: f64 = 1e-13;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MassSpec {
    pub masses: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MassSystem {
    masses: Vec<f64>,
    total: f64,
    /// P: reduced relative coordinates -> center-of-mass-zero positions, n x (n-1).
    reduction: DMatrix<f64>,
    /// M = P^T diag(m) P.
    mass_matrix: DMatrix<f64>,
    /// C: orthonormal coordinates -> relative coordinates.
    basis: DMatrix<f64>,
    /// C^-1 = L^T.
    basis_inv: DMatrix<f64>,
    /// P C: orthonormal coordinates -> positions.
    positions_map: DMatrix<f64>,
}

/// A reduced configuration validated against the collision set.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedConfig(Vec<Complex64>);

impl ReducedConfig {
    pub fn new(system: &MassSystem, u: Vec<Complex64>) -> Result<Self> {
        system.check_dim(&u)?;
        system.min_distance(&u)?;
        Ok(Self(u))
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<Complex64> {
        self.0
    }
}

/// A reduced velocity in the same coordinates as [`ReducedConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedVelocity(pub Vec<Complex64>);

impl MassSystem {
    pub fn new(masses: Vec<f64>) -> Result<Self> {
        let n = masses.len();
        if n < 2 {
            return Err(Error::InvalidMasses(format!("need at least 2 bodies, got {n}")));
        }
        if let Some(m) = masses.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
            return Err(Error::InvalidMasses(format!("mass {m} is not strictly positive")));
        }
        let total: f64 = masses.iter().sum();
        let k = n - 1;

        let mut reduction = DMatrix::zeros(n, k);
        for a in 0..n {
            for i in 0..k {
                let delta = if a == i { 1.0 } else { 0.0 };
                reduction[(a, i)] = delta - masses[i] / total;
            }
        }
        let diag = DMatrix::from_diagonal(&DVector::from_column_slice(&masses));
        let mass_matrix = reduction.transpose() * &diag * &reduction;
        let mass_matrix = (&mass_matrix + mass_matrix.transpose()) * 0.5;

        let chol = mass_matrix
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidMasses("mass matrix is not positive definite".into()))?;
        let basis_inv = chol.l().transpose();
        let basis = basis_inv
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidMasses("singular mass basis".into()))?;
        let positions_map = &reduction * &basis;

        Ok(Self {
            masses,
            total,
            reduction,
            mass_matrix,
            basis,
            basis_inv,
            positions_map,
        })
    }

    pub fn from_json(doc: &str) -> Result<Self> {
        let spec: MassSpec = serde_json::from_str(doc)?;
        Self::new(spec.masses)
    }

    pub fn equal(n: usize) -> Result<Self> {
        Self::new(vec![1.0; n])
    }

    pub fn spec(&self) -> MassSpec {
        MassSpec {
            masses: self.masses.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.masses.len()
    }

    /// Complex dimension of the reduced configuration space, n - 1.
    pub fn dim(&self) -> usize {
        self.masses.len() - 1
    }

    /// Complex dimension of the shape chart, n - 2.
    pub fn shape_dim(&self) -> usize {
        self.masses.len() - 2
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn total_mass(&self) -> f64 {
        self.total
    }

    pub fn reduction(&self) -> &DMatrix<f64> {
        &self.reduction
    }

    pub fn mass_matrix(&self) -> &DMatrix<f64> {
        &self.mass_matrix
    }

    /// Change of basis C taking orthonormal coordinates to relative coordinates.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub(crate) fn check_dim(&self, v: &[Complex64]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Hermitian mass product in orthonormal coordinates.
    pub fn hermitian_mass(&self, v: &[Complex64], w: &[Complex64]) -> Result<Complex64> {
        self.check_dim(v)?;
        self.check_dim(w)?;
        Ok(hermitian(v, w))
    }

    /// Hermitian mass product `conj(v)^T M w` in relative coordinates.
    pub fn hermitian_mass_relative(&self, v: &[Complex64], w: &[Complex64]) -> Result<Complex64> {
        self.check_dim(v)?;
        self.check_dim(w)?;
        let k = self.dim();
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..k {
            for j in 0..k {
                acc += v[i].conj() * self.mass_matrix[(i, j)] * w[j];
            }
        }
        Ok(acc)
    }

    pub fn moment_of_inertia(&self, u: &[Complex64]) -> f64 {
        norm_sq(u)
    }

    fn apply(map: &DMatrix<f64>, v: &[Complex64]) -> Vec<Complex64> {
        (0..map.nrows())
            .map(|a| (0..map.ncols()).map(|k| v[k] * map[(a, k)]).sum())
            .collect()
    }

    /// Positions `q_a` (as complex numbers) with center of mass at the origin.
    pub fn positions(&self, u: &[Complex64]) -> Vec<Complex64> {
        Self::apply(&self.positions_map, u)
    }

    /// Velocities of the bodies; the same linear map as [`Self::positions`].
    pub fn velocities(&self, zeta: &[Complex64]) -> Vec<Complex64> {
        Self::apply(&self.positions_map, zeta)
    }

    /// Relative coordinates `z = C u`.
    pub fn relative(&self, u: &[Complex64]) -> Vec<Complex64> {
        Self::apply(&self.basis, u)
    }

    /// Orthonormal coordinates of arbitrary positions (translation is discarded).
    pub fn from_positions(&self, q: &[Complex64]) -> Result<Vec<Complex64>> {
        if q.len() != self.n() {
            return Err(Error::Dimension {
                expected: self.n(),
                got: q.len(),
            });
        }
        let last = q[self.n() - 1];
        let z: Vec<Complex64> = q[..self.dim()].iter().map(|qi| qi - last).collect();
        Ok(Self::apply(&self.basis_inv, &z))
    }

    /// Smallest mutual distance, or a collision error carrying the offending pair.
    pub fn min_distance(&self, u: &[Complex64]) -> Result<f64> {
        self.min_distance_positions(&self.positions(u))
    }

    fn min_distance_positions(&self, q: &[Complex64]) -> Result<f64> {
        let scale = q.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let mut best = (f64::INFINITY, 0, 1);
        for i in 0..q.len() {
            for j in (i + 1)..q.len() {
                let d = (q[i] - q[j]).norm();
                if d < best.0 {
                    best = (d, i, j);
                }
            }
        }
        let (distance, i, j) = best;
        if !(distance > COLLISION_GUARD * scale) || !distance.is_finite() {
            return Err(Error::Collision { i, j, distance });
        }
        Ok(distance)
    }

    pub fn potential_positions(&self, q: &[Complex64]) -> Result<f64> {
        self.min_distance_positions(q)?;
        let m = &self.masses;
        let mut u = 0.0;
        for i in 0..q.len() {
            for j in (i + 1)..q.len() {
                u += m[i] * m[j] / (q[i] - q[j]).norm();
            }
        }
        Ok(u)
    }

    /// Newtonian potential U (positive; the potential energy is -U).
    pub fn potential(&self, u: &[Complex64]) -> Result<f64> {
        self.check_dim(u)?;
        self.potential_positions(&self.positions(u))
    }

    /// Partial gradients `grad_a U = sum_b m_a m_b (q_b - q_a) / r_ab^3`.
    pub fn gradient_positions(&self, q: &[Complex64]) -> Result<Vec<Complex64>> {
        self.min_distance_positions(q)?;
        let m = &self.masses;
        let mut g = vec![Complex64::new(0.0, 0.0); q.len()];
        for i in 0..q.len() {
            for j in (i + 1)..q.len() {
                let d = q[j] - q[i];
                let r = d.norm();
                let f = d * (m[i] * m[j] / (r * r * r));
                g[i] += f;
                g[j] -= f;
            }
        }
        Ok(g)
    }

    /// Hessian of U with respect to the 2n real position coordinates.
    pub fn hessian_positions(&self, q: &[Complex64]) -> Result<DMatrix<f64>> {
        self.min_distance_positions(q)?;
        let n = q.len();
        let m = &self.masses;
        let mut h = DMatrix::zeros(2 * n, 2 * n);
        for a in 0..n {
            for b in (a + 1)..n {
                let d = q[a] - q[b];
                let r2 = d.norm_sqr();
                let r = r2.sqrt();
                let mm = m[a] * m[b];
                let dv = [d.re, d.im];
                for x in 0..2 {
                    for y in 0..2 {
                        let id = if x == y { 1.0 } else { 0.0 };
                        let val = mm * (3.0 * dv[x] * dv[y] - r2 * id) / (r2 * r2 * r);
                        h[(2 * a + x, 2 * a + y)] += val;
                        h[(2 * b + x, 2 * b + y)] += val;
                        h[(2 * a + x, 2 * b + y)] -= val;
                        h[(2 * b + x, 2 * a + y)] -= val;
                    }
                }
            }
        }
        Ok(h)
    }

    /// Gradient of U in orthonormal coordinates, encoded as `dU/dx + i dU/dy`.
    pub fn potential_gradient(&self, u: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_dim(u)?;
        let g = self.gradient_positions(&self.positions(u))?;
        let q = &self.positions_map;
        Ok((0..self.dim())
            .map(|k| (0..self.n()).map(|a| g[a] * q[(a, k)]).sum())
            .collect())
    }

    /// Hessian of U in the real layout of orthonormal coordinates.
    pub fn potential_hessian(&self, u: &[Complex64]) -> Result<DMatrix<f64>> {
        self.check_dim(u)?;
        let hq = self.hessian_positions(&self.positions(u))?;
        let n = self.n();
        let k = self.dim();
        let mut jac = DMatrix::zeros(2 * n, 2 * k);
        for a in 0..n {
            for i in 0..k {
                let c = self.positions_map[(a, i)];
                jac[(2 * a, 2 * i)] = c;
                jac[(2 * a + 1, 2 * i + 1)] = c;
            }
        }
        Ok(jac.transpose() * hq * jac)
    }

    fn affine_point(&self, s: &[Complex64]) -> Result<Vec<Complex64>> {
        if s.len() != self.shape_dim() {
            return Err(Error::Dimension {
                expected: self.shape_dim(),
                got: s.len(),
            });
        }
        let mut u = s.to_vec();
        u.push(Complex64::new(1.0, 0.0));
        Ok(u)
    }

    /// Shape potential `V(s) = ||(s,1)|| U(s,1)`.
    pub fn shape_potential(&self, s: &[Complex64]) -> Result<f64> {
        let u = self.affine_point(s)?;
        Ok(norm_sq(&u).sqrt() * self.potential(&u)?)
    }

    /// Euclidean gradient of V in the real layout of `s`.
    pub fn shape_gradient(&self, s: &[Complex64]) -> Result<DVector<f64>> {
        let u = self.affine_point(s)?;
        let big_n = norm_sq(&u);
        let root = big_n.sqrt();
        let pot = self.potential(&u)?;
        let gu = self.potential_gradient(&u)?;
        let gs = to_real(&gu[..self.shape_dim()]);
        let sr = to_real(s);
        Ok(sr * (pot / root) + gs * root)
    }

    /// Euclidean Hessian of V in the real layout of `s`.
    pub fn shape_hessian(&self, s: &[Complex64]) -> Result<DMatrix<f64>> {
        let u = self.affine_point(s)?;
        let m2 = 2 * self.shape_dim();
        let big_n = norm_sq(&u);
        let root = big_n.sqrt();
        let pot = self.potential(&u)?;
        let gu = self.potential_gradient(&u)?;
        let gs = to_real(&gu[..self.shape_dim()]);
        let hu = self.potential_hessian(&u)?;
        let hss = hu.view((0, 0), (m2, m2)).into_owned();
        let sr = to_real(s);

        let ident = DMatrix::<f64>::identity(m2, m2);
        let root_hess = ident / root - (&sr * sr.transpose()) / (big_n * root);
        let cross = (&sr * gs.transpose() + &gs * sr.transpose()) / root;
        Ok(root_hess * pot + cross + hss * root)
    }

    /// Total energy `1/2 ||zeta||^2 - U(u)`.
    pub fn total_energy(&self, u: &[Complex64], zeta: &[Complex64]) -> Result<f64> {
        self.check_dim(zeta)?;
        Ok(0.5 * norm_sq(zeta) - self.potential(u)?)
    }

    /// Planar angular momentum `sum m_a q_a ^ qdot_a` evaluated on positions.
    pub fn angular_momentum_positions(&self, q: &[Complex64], qdot: &[Complex64]) -> f64 {
        self.masses
            .iter()
            .zip(q.iter().zip(qdot))
            .map(|(m, (x, v))| m * (x.re * v.im - x.im * v.re))
            .sum()
    }
}
