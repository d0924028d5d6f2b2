//! Central configurations as critical points of the shape potential V, and
//! the linearization of the blown-up flow at the corresponding restpoints
//! on the collision manifold.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::FsMetric;
use crate::layout::{from_real, to_real};
use crate::lowdisc::ball_points;
use crate::mass::MassSystem;

/// Chart radius beyond which the Newton iteration is considered to have run
/// off to the chart boundary.
pub const CHART_ESCAPE: f64 = 1e6;

#[derive(Debug, Clone)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Armijo sufficient decrease constant.
    pub armijo: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 200,
            armijo: 1e-4,
        }
    }
}

/// The pair of restpoint eigenvalues attached to one FS-Hessian eigenvalue `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaPair {
    pub c: f64,
    pub plus: Complex64,
    pub minus: Complex64,
}

#[derive(Debug, Clone)]
pub struct CentralConfig {
    pub s0: Vec<Complex64>,
    /// V(s0).
    pub value: f64,
    /// Restpoint velocity `-sqrt(2 V(s0))`.
    pub v0: f64,
    /// Eigenvalues of the FS-Hessian at s0, ascending.
    pub hessian_spectrum: Vec<f64>,
    pub lambda_pairs: Vec<LambdaPair>,
    pub degenerate: bool,
    /// |grad V(s0)|.
    pub residual: f64,
    pub iterations: usize,
    pub trace: Vec<f64>,
}

impl CentralConfig {
    pub fn morse_index(&self) -> usize {
        self.hessian_spectrum.iter().filter(|c| **c < 0.0).count()
    }

    /// Full restpoint spectrum `{v0 (twice: r and v directions)} U {lambda_+-(c_i)}`.
    pub fn restpoint_spectrum(&self) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(self.v0, 0.0); 2];
        for p in &self.lambda_pairs {
            out.push(p.plus);
            out.push(p.minus);
        }
        out
    }

    /// Smallest |Re lambda| over the stable (Re lambda < 0) part of the
    /// restpoint spectrum.
    pub fn slowest_stable_rate(&self) -> f64 {
        self.restpoint_spectrum()
            .iter()
            .filter(|l| l.re < 0.0)
            .map(|l| -l.re)
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub nondegenerate: bool,
    pub morse_index: usize,
    /// Restpoint spectrum as `[re, im]` pairs.
    pub spectrum: Vec<[f64; 2]>,
    /// Every nonreal eigenvalue has positive real part.
    pub nonreal_unstable: bool,
    /// `Re lambda_+ > 0` for every pair.
    pub plus_unstable: bool,
}

/// Stacked residual `grad_i U(q) + lambda m_i q_i`, as complex numbers.
pub fn cc_residual_full(sys: &MassSystem, q: &[Complex64], lambda: f64) -> Result<Vec<Complex64>> {
    let g = sys.gradient_positions(q)?;
    Ok(g.iter()
        .zip(q.iter().zip(sys.masses()))
        .map(|(gi, (qi, m))| gi + qi * (lambda * m))
        .collect())
}

/// Multiplier `lambda = U / I` of a central configuration given by positions.
pub fn cc_multiplier(sys: &MassSystem, q: &[Complex64]) -> Result<f64> {
    let inertia: f64 = q
        .iter()
        .zip(sys.masses())
        .map(|(x, m)| m * x.norm_sqr())
        .sum();
    Ok(sys.potential_positions(q)? / inertia)
}

/// FS-gradient `A(s)^-1 grad V(s)`.
pub fn fs_gradient(sys: &MassSystem, s: &[Complex64]) -> Result<DVector<f64>> {
    let g = sys.shape_gradient(s)?;
    Ok(FsMetric::new(s).solve(&g))
}

/// Derivative of the FS-gradient,
/// `D(A^-1 grad V)[d] = A^-1 H d - A^-1 DA[d] A^-1 grad V`.
pub fn fs_hessian(sys: &MassSystem, s: &[Complex64]) -> Result<DMatrix<f64>> {
    let metric = FsMetric::new(s);
    let g = sys.shape_gradient(s)?;
    let h = sys.shape_hessian(s)?;
    let fs_g = metric.solve(&g);
    let dim = g.len();
    let mut out = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        let e = DVector::from_fn(dim, |i, _| if i == j { 1.0 } else { 0.0 });
        let col = metric.solve(&(h.column(j) - metric.derivative(&e) * &fs_g));
        out.set_column(j, &col);
    }
    Ok(out)
}

/// Eigenvalues of `A^-1 H` (ascending), computed through the symmetric
/// whitened matrix `L^-1 H L^-T` with `A = L L^T`. At a critical point this is
/// the spectrum of the FS-Hessian.
pub fn whitened_spectrum(metric: &FsMetric, h: &DMatrix<f64>) -> Vec<f64> {
    let l = metric.cholesky().l();
    let linv = l
        .clone()
        .try_inverse()
        .expect("Cholesky factor of a positive definite matrix is invertible");
    let w = &linv * h * linv.transpose();
    let w = (&w + w.transpose()) * 0.5;
    let mut ev: Vec<f64> = w.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// `lambda_+-` of the 2x2 block `[[0, 1], [c, -v0/2]]`, i.e. the roots of
/// `lambda^2 + (v0/2) lambda - c = 0`. Expects `v0 < 0`.
///
/// In the real case `lambda_-` is obtained from the product `-c` so that it
/// vanishes exactly when `c = 0`.
pub fn restpoint_spectrum(v0: f64, c: f64) -> (Complex64, Complex64) {
    debug_assert!(v0 < 0.0);
    let disc = v0 * v0 + 16.0 * c;
    if disc >= 0.0 {
        let plus = (-v0 + disc.sqrt()) / 4.0;
        let minus = -c / plus + 0.0;
        (Complex64::new(plus, 0.0), Complex64::new(minus, 0.0))
    } else {
        let re = -v0 / 4.0;
        let im = (-disc).sqrt() / 4.0;
        (Complex64::new(re, im), Complex64::new(re, -im))
    }
}

fn grad_norm(sys: &MassSystem, s: &DVector<f64>) -> Result<f64> {
    Ok(sys.shape_gradient(&from_real(s.as_slice()))?.norm())
}

/// Assembles restpoint data at a point already known to be critical.
pub fn central_config_at(
    sys: &MassSystem,
    s: &[Complex64],
    iterations: usize,
    trace: Vec<f64>,
) -> Result<CentralConfig> {
    let value = sys.shape_potential(s)?;
    let residual = sys.shape_gradient(s)?.norm();
    let metric = FsMetric::new(s);
    let h = sys.shape_hessian(s)?;
    let hessian_spectrum = whitened_spectrum(&metric, &h);
    let v0 = -(2.0 * value).sqrt();
    let lambda_pairs = hessian_spectrum
        .iter()
        .map(|&c| {
            let (plus, minus) = restpoint_spectrum(v0, c);
            LambdaPair { c, plus, minus }
        })
        .collect();
    let scale = hessian_spectrum.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let degenerate = hessian_spectrum
        .iter()
        .any(|c| c.abs() < DEGENERACY_TOL * scale);
    Ok(CentralConfig {
        s0: s.to_vec(),
        value,
        v0,
        hessian_spectrum,
        lambda_pairs,
        degenerate,
        residual,
        iterations,
        trace,
    })
}

/// Relative threshold `|c| < tol * max |c_i|` for flagging degeneracy.
pub const DEGENERACY_TOL: f64 = 1e-8;

/// Damped Newton iteration on `grad V = 0` with Armijo backtracking on
/// `|grad V|^2 / 2`. When the Newton system is singular or no acceptable
/// Newton step exists, one backtracking FS-gradient descent step on V is
/// taken instead.
pub fn find_cc(sys: &MassSystem, s_init: &[Complex64], opts: &NewtonOptions) -> Result<CentralConfig> {
    if s_init.len() != sys.shape_dim() {
        return Err(Error::Dimension {
            expected: sys.shape_dim(),
            got: s_init.len(),
        });
    }
    let mut s = to_real(s_init);
    let mut g = sys.shape_gradient(s_init)?;
    let mut trace = vec![g.norm()];

    for iter in 0..opts.max_iter {
        let gn = g.norm();
        if gn < opts.tol {
            return central_config_at(sys, &from_real(s.as_slice()), iter, trace);
        }
        let sc = from_real(s.as_slice());
        let h = sys.shape_hessian(&sc)?;
        let phi = 0.5 * gn * gn;

        let newton = h.clone().lu().solve(&(-&g)).filter(|d| d.iter().all(|x| x.is_finite()));
        let mut next = None;
        if let Some(d) = newton {
            let mut t = 1.0;
            while t > 1e-10 {
                let trial = &s + &d * t;
                if let Ok(gt) = grad_norm(sys, &trial) {
                    if 0.5 * gt * gt <= phi * (1.0 - 2.0 * opts.armijo * t) {
                        next = Some(trial);
                        break;
                    }
                }
                t *= 0.5;
            }
        }
        let next = match next {
            Some(x) => x,
            None => descent_step(sys, &s, &g, opts)?,
        };
        if next.norm() > CHART_ESCAPE {
            return Err(Error::Chart(format!(
                "iteration left the chart (|s| = {:e})",
                next.norm()
            )));
        }
        s = next;
        g = sys.shape_gradient(&from_real(s.as_slice()))?;
        trace.push(g.norm());
    }
    let residual = g.norm();
    if residual < opts.tol {
        return central_config_at(sys, &from_real(s.as_slice()), opts.max_iter, trace);
    }
    Err(Error::Divergence {
        iterations: opts.max_iter,
        residual,
        trace,
    })
}

fn descent_step(sys: &MassSystem, s: &DVector<f64>, g: &DVector<f64>, opts: &NewtonOptions) -> Result<DVector<f64>> {
    let sc = from_real(s.as_slice());
    let d = -FsMetric::new(&sc).solve(g);
    let v = sys.shape_potential(&sc)?;
    let slope = g.dot(&d);
    let mut t = 1.0;
    while t > 1e-14 {
        let trial = s + &d * t;
        if let Ok(vt) = sys.shape_potential(&from_real(trial.as_slice())) {
            if vt <= v + opts.armijo * t * slope {
                return Ok(trial);
            }
        }
        t *= 0.5;
    }
    Err(Error::Divergence {
        iterations: 0,
        residual: g.norm(),
        trace: vec![g.norm()],
    })
}

pub fn classify(cc: &CentralConfig, tol_degenerate: f64) -> Classification {
    let scale = cc.hessian_spectrum.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let nondegenerate = cc
        .hessian_spectrum
        .iter()
        .all(|c| c.abs() >= tol_degenerate * scale);
    let spectrum = cc.restpoint_spectrum();
    let nonreal_unstable = spectrum.iter().filter(|l| l.im != 0.0).all(|l| l.re > 0.0);
    let plus_unstable = cc.lambda_pairs.iter().all(|p| p.plus.re > 0.0);
    Classification {
        nondegenerate,
        morse_index: cc.morse_index(),
        spectrum: spectrum.iter().map(|l| [l.re, l.im]).collect(),
        nonreal_unstable,
        plus_unstable,
    }
}

#[derive(Debug, Clone)]
pub struct MultistartOptions {
    pub starts: usize,
    pub seed: u64,
    pub radius: f64,
    /// Two solutions closer than this in the chart are the same CC.
    pub dedupe: f64,
    pub newton: NewtonOptions,
}

impl Default for MultistartOptions {
    fn default() -> Self {
        Self {
            starts: 64,
            seed: 0,
            radius: 3.0,
            dedupe: 1e-6,
            newton: NewtonOptions::default(),
        }
    }
}

/// Start points of a multistart search: Halton points of the chart ball.
pub fn multistart_seeds(sys: &MassSystem, opts: &MultistartOptions) -> Vec<Vec<Complex64>> {
    ball_points(opts.starts, 2 * sys.shape_dim(), opts.radius, opts.seed)
        .into_iter()
        .map(|x| from_real(&x))
        .collect()
}

/// Merges solver results into a catalog: failures are dropped, duplicates
/// removed, and entries sorted by V0 then lexicographically by s0.
pub fn build_catalog(results: Vec<Result<CentralConfig>>, dedupe: f64) -> Vec<CentralConfig> {
    let mut out: Vec<CentralConfig> = Vec::new();
    for cc in results.into_iter().flatten() {
        let dup = out.iter().any(|o| {
            o.s0.iter()
                .zip(&cc.s0)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt()
                < dedupe
        });
        if !dup {
            out.push(cc);
        }
    }
    out.sort_by(|a, b| {
        a.value.total_cmp(&b.value).then_with(|| {
            let ka = to_real(&a.s0);
            let kb = to_real(&b.s0);
            ka.iter()
                .zip(kb.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    out
}

/// Sequential multistart search.
pub fn multistart(sys: &MassSystem, opts: &MultistartOptions) -> Vec<CentralConfig> {
    let results = multistart_seeds(sys, opts)
        .iter()
        .map(|s| find_cc(sys, s, &opts.newton))
        .collect();
    build_catalog(results, opts.dedupe)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::to_chart;

    fn equilateral() -> Vec<Complex64> {
        let r = 1.0 / 3f64.sqrt();
        (0..3)
            .map(|k| Complex64::from_polar(r, 2.0 * std::f64::consts::PI * k as f64 / 3.0))
            .collect()
    }

    fn lagrange_chart(sys: &MassSystem) -> Vec<Complex64> {
        let u = sys.from_positions(&equilateral()).unwrap();
        to_chart(&u).unwrap().s
    }

    #[test]
    fn residual_of_equilateral_triangle() {
        let sys = MassSystem::equal(3).unwrap();
        let q = equilateral();
        let lambda = cc_multiplier(&sys, &q).unwrap();
        assert!((lambda - 3.0).abs() < 1e-13);
        let res = cc_residual_full(&sys, &q, lambda).unwrap();
        assert!(res.iter().all(|r| r.norm() < 1e-12));
        let wrong = cc_residual_full(&sys, &q, 1.0).unwrap();
        assert!(wrong.iter().any(|r| r.norm() > 0.1));
    }

    #[test]
    fn residual_homogeneity() {
        let sys = MassSystem::new(vec![1.0, 2.0, 0.5]).unwrap();
        let q = vec![
            Complex64::new(0.3, -0.2),
            Complex64::new(-0.4, 0.5),
            Complex64::new(0.7, 0.1),
        ];
        let a = cc_residual_full(&sys, &q, 0.8).unwrap();
        let q2: Vec<Complex64> = q.iter().map(|x| x * 2.0).collect();
        let b = cc_residual_full(&sys, &q2, 0.8 / 8.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x / 4.0 - y).norm() < 1e-14);
        }
    }

    #[test]
    fn spectrum_examples() {
        let v0 = -6f64.sqrt();
        let (p, m) = restpoint_spectrum(v0, 0.0);
        // at c = 0 the pair is (-v0/2, 0)
        assert!((p.re - 6f64.sqrt() / 2.0).abs() < 1e-15 && p.im == 0.0);
        assert_eq!(m, Complex64::new(0.0, 0.0));
        let (p, m) = restpoint_spectrum(-2.0, -1.0);
        assert!((p.re - 0.5).abs() < 1e-15 && (m.re - 0.5).abs() < 1e-15);
        assert!((p.im - 12f64.sqrt() / 4.0).abs() < 1e-15);
        assert_eq!(p.im, -m.im);
        for c in [-1.0, 1.0] {
            assert_ne!(restpoint_spectrum(v0, c).1.re, 0.0);
        }
    }

    #[test]
    fn fs_hessian_matches_finite_differences() {
        let sys = MassSystem::new(vec![1.0, 1.5, 0.7, 1.2]).unwrap();
        let s = vec![Complex64::new(0.3, -0.4), Complex64::new(-0.6, 0.2)];
        let analytic = fs_hessian(&sys, &s).unwrap();
        let x = to_real(&s);
        let h = 1e-5;
        for j in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let gp = fs_gradient(&sys, &from_real(xp.as_slice())).unwrap();
            let gm = fs_gradient(&sys, &from_real(xm.as_slice())).unwrap();
            let fd = (gp - gm) / (2.0 * h);
            let col = analytic.column(j);
            assert!((fd - col).norm() <= 1e-6 * col.norm().max(1.0), "column {j}");
        }
    }

    #[test]
    fn lagrange_restpoint() {
        let sys = MassSystem::equal(3).unwrap();
        let guess: Vec<Complex64> = lagrange_chart(&sys).iter().map(|c| c + Complex64::new(0.05, -0.03)).collect();
        let cc = find_cc(&sys, &guess, &NewtonOptions::default()).unwrap();
        assert!((cc.value - 3.0).abs() < 1e-10);
        assert!((cc.v0 + 6f64.sqrt()).abs() < 1e-10);
        assert!(cc.residual < 1e-12);
        assert!(!cc.degenerate);
        assert_eq!(cc.morse_index(), 0);
        let class = classify(&cc, DEGENERACY_TOL);
        assert!(class.nondegenerate && class.nonreal_unstable && class.plus_unstable);
        // no forced zero eigenvalue from rotation
        assert!(cc.hessian_spectrum.iter().all(|c| c.abs() > 1e-6));
        for p in &cc.lambda_pairs {
            assert!((p.plus + p.minus + cc.v0 / 2.0).norm() < 1e-12);
            assert!((p.plus * p.minus + p.c).norm() < 1e-12);
        }
    }

    #[test]
    fn converged_start_returns_immediately() {
        let sys = MassSystem::equal(3).unwrap();
        let guess: Vec<Complex64> = lagrange_chart(&sys).iter().map(|c| c + Complex64::new(0.02, 0.01)).collect();
        let cc = find_cc(&sys, &guess, &NewtonOptions::default()).unwrap();
        let again = find_cc(&sys, &cc.s0, &NewtonOptions::default()).unwrap();
        assert!(again.iterations <= 2);
        assert!(again.s0.iter().zip(&cc.s0).all(|(a, b)| (a - b).norm() < 1e-12));
    }

    #[test]
    fn chart_and_full_space_residuals_agree() {
        let sys = MassSystem::new(vec![1.0, 2.0, 3.0]).unwrap();
        let opts = MultistartOptions {
            starts: 400,
            ..Default::default()
        };
        let cat = multistart(&sys, &opts);
        assert_eq!(cat.len(), 5, "two Lagrange and three Euler points");
        for cc in &cat {
            let mut u = cc.s0.clone();
            u.push(Complex64::new(1.0, 0.0));
            let q = sys.positions(&u);
            let lambda = cc_multiplier(&sys, &q).unwrap();
            let res = cc_residual_full(&sys, &q, lambda).unwrap();
            let norm = res.iter().map(|r| r.norm_sqr()).sum::<f64>().sqrt();
            assert!(norm < 10.0 * 1e-12 * (1.0 + lambda), "full residual {norm:e}");
        }
    }

    #[test]
    fn multistart_is_deterministic() {
        let sys = MassSystem::equal(3).unwrap();
        let opts = MultistartOptions {
            starts: 16,
            seed: 3,
            ..Default::default()
        };
        let a = multistart(&sys, &opts);
        let b = multistart(&sys, &opts);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.s0, y.s0);
        }
    }
}
