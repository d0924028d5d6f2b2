//! Horizontal lifts of prescribed shape curves.
//!
//! A curve `s(t)` in the shape chart is lifted at fixed size `r = 1` by
//! solving `theta' = -Omega(s, s')/||(s,1)||^2`, which makes the angular
//! momentum of the reconstructed motion vanish identically. The spiral
//! `s1 = t^(-1/2) e^(ict)` has zero rotational velocity but a lift angle that
//! diverges like `-c ln t`.

use std::sync::Arc;

use num_complex::Complex64;
use serde::Serialize;

use crate::dynamics::SpinSeries;
use crate::error::{Error, Result};
use crate::geometry::{
    affine_norm_sq, angular_momentum, chart_velocity, from_chart, fs_norm_sq, omega_form, saari_decompose, spin_rate,
    FsMetric, ShapePoint, ShapeVelocity,
};
use crate::layout::norm_sq;
use crate::ode::{Control, Dop853, OdeSystem};

type CurveFn = Arc<dyn Fn(f64) -> Vec<Complex64> + Send + Sync>;

/// Parametrized curve in chart coordinates together with its derivative.
#[derive(Clone)]
pub struct ShapeCurve {
    pub s: CurveFn,
    pub ds: CurveFn,
    pub t_start: f64,
    pub t_end: f64,
    pub tag: String,
    /// `theta(t) - theta(t_start)` in closed form, when known.
    pub closed_form: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
}

impl std::fmt::Debug for ShapeCurve {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ShapeCurve")
            .field("tag", &self.tag)
            .field("t_start", &self.t_start)
            .field("t_end", &self.t_end)
            .finish()
    }
}

fn first_coordinate(dim: usize, v: Complex64) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); dim];
    out[0] = v;
    out
}

/// `s(t) = (t^(-1/2) e^(ict), 0, ..., 0)` on `[t0, t_end]`, with `dim` complex
/// shape coordinates (`dim = n - 2`).
pub fn spiral_curve(c: f64, t0: f64, t_end: f64, dim: usize) -> Result<ShapeCurve> {
    if !(c >= 0.0) {
        return Err(Error::Precondition(format!("spiral rate c = {c} must be nonnegative")));
    }
    if !(t0 > 1.0) || !(t_end > t0) || dim == 0 {
        return Err(Error::Precondition(format!(
            "need 1 < t0 < t_end and dim >= 1 (t0 = {t0}, t_end = {t_end}, dim = {dim})"
        )));
    }
    Ok(ShapeCurve {
        s: Arc::new(move |t| first_coordinate(dim, Complex64::from_polar(t.powf(-0.5), c * t))),
        ds: Arc::new(move |t| {
            let e = Complex64::from_polar(t.powf(-0.5), c * t);
            first_coordinate(dim, e * Complex64::new(-0.5 / t, c))
        }),
        t_start: t0,
        t_end,
        tag: format!("spiral c={c}"),
        closed_form: Some(Arc::new(move |t| -c * ((t + 1.0) / (t0 + 1.0)).ln())),
    })
}

/// `s(t) = s0` on `[t0, t_end]`.
pub fn constant_curve(s0: Vec<Complex64>, t0: f64, t_end: f64) -> ShapeCurve {
    let dim = s0.len();
    ShapeCurve {
        s: Arc::new(move |_| s0.clone()),
        ds: Arc::new(move |_| vec![Complex64::new(0.0, 0.0); dim]),
        t_start: t0,
        t_end,
        tag: "constant".into(),
        closed_form: Some(Arc::new(|_| 0.0)),
    }
}

/// `s(t) = (t^(-1/2) e^(i phase), 0, ..., 0)`: straight infall towards 0.
pub fn radial_curve(phase: f64, t0: f64, t_end: f64, dim: usize) -> ShapeCurve {
    let u = Complex64::from_polar(1.0, phase);
    ShapeCurve {
        s: Arc::new(move |t| first_coordinate(dim, u * t.powf(-0.5))),
        ds: Arc::new(move |t| first_coordinate(dim, u * (-0.5 * t.powf(-1.5)))),
        t_start: t0,
        t_end,
        tag: "radial".into(),
        closed_form: Some(Arc::new(|_| 0.0)),
    }
}

#[derive(Debug, Clone)]
pub struct LiftOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Log-spaced output samples.
    pub samples: usize,
    /// `|theta - theta0|` beyond which the lift counts as diverged.
    pub threshold: f64,
}

impl Default for LiftOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-12,
            atol: 1e-14,
            samples: 1001,
            threshold: 5.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LiftResult {
    pub time: Vec<f64>,
    pub s1: Vec<(f64, f64)>,
    pub theta: Vec<f64>,
    pub closed_form: Option<Vec<f64>>,
    /// Fubini-Study arclength of the shape curve.
    pub arclength: Vec<f64>,
    /// `int Omega(s, s') dt`, i.e. `int r^2 psi'` for one coordinate.
    pub winding: Vec<f64>,
    /// `|J(z, z')|` of the reconstructed motion at each sample.
    pub j_residual: Vec<f64>,
    /// Norm of the Saari rotation component of `z'`.
    pub rotation_norm: Vec<f64>,
    /// FS speed of the shape curve at each sample.
    pub speed: Vec<f64>,
    pub max_abs_err: Option<f64>,
    pub max_rel_err: Option<f64>,
    pub diverged: bool,
    #[serde(skip)]
    pub spin_bound: Vec<f64>,
}

impl LiftResult {
    /// The lift as input for the generic spin accumulator.
    pub fn spin_series(&self) -> SpinSeries {
        SpinSeries {
            time: self.time.clone(),
            theta: self.theta.clone(),
            arclength: self.arclength.clone(),
            bound: self.spin_bound.clone(),
            tail: None,
        }
    }
}

struct LiftSystem<'a>(&'a ShapeCurve);

impl OdeSystem for LiftSystem<'_> {
    fn dim(&self) -> usize {
        3
    }

    fn rhs(&self, t: f64, _y: &[f64], dy: &mut [f64]) -> Result<()> {
        let s = (self.0.s)(t);
        let ds = (self.0.ds)(t);
        if !s.iter().chain(&ds).all(|c| c.re.is_finite() && c.im.is_finite()) {
            return Err(Error::Chart(format!("curve not finite at t = {t}")));
        }
        dy[0] = spin_rate(&s, &ds);
        dy[1] = fs_norm_sq(&s, &ds).sqrt();
        dy[2] = omega_form(&s, &ds);
        Ok(())
    }
}

fn log_grid(t0: f64, t1: f64, count: usize) -> Vec<f64> {
    let count = count.max(2);
    let (a, b) = (t0.ln(), t1.ln());
    let mut g: Vec<f64> = (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect();
    g[0] = t0;
    g[count - 1] = t1;
    g
}

/// Lifts `curve` horizontally starting from angle `theta0` at `r = 1`.
pub fn horizontal_lift(curve: &ShapeCurve, theta0: f64, opts: &LiftOptions) -> Result<LiftResult> {
    if !(curve.t_start > 0.0 && curve.t_end > curve.t_start) {
        return Err(Error::Precondition(format!(
            "bad curve interval [{}, {}]",
            curve.t_start, curve.t_end
        )));
    }
    let grid = log_grid(curve.t_start, curve.t_end, opts.samples);
    let solver = Dop853::with_tolerances(opts.rtol, opts.atol);
    let sys = LiftSystem(curve);
    let y0 = [theta0, 0.0, 0.0];
    let mut states = vec![y0.to_vec()];
    let mut next = 1;
    let mut buf = [0.0; 3];
    solver.solve(&sys, curve.t_start, &y0, curve.t_end, |step| {
        while next < grid.len() && step.contains(grid[next]) {
            step.interpolate(grid[next], &mut buf);
            states.push(buf.to_vec());
            next += 1;
        }
        Ok(Control::Continue)
    })?;
    if states.len() != grid.len() {
        return Err(Error::Precondition("lift did not reach the end of the curve".into()));
    }

    let mut out = LiftResult {
        time: grid.clone(),
        s1: Vec::with_capacity(grid.len()),
        theta: Vec::with_capacity(grid.len()),
        closed_form: curve.closed_form.as_ref().map(|f| grid.iter().map(|&t| theta0 + f(t)).collect()),
        arclength: Vec::with_capacity(grid.len()),
        winding: Vec::with_capacity(grid.len()),
        j_residual: Vec::with_capacity(grid.len()),
        rotation_norm: Vec::with_capacity(grid.len()),
        speed: Vec::with_capacity(grid.len()),
        max_abs_err: None,
        max_rel_err: None,
        diverged: false,
        spin_bound: Vec::with_capacity(grid.len()),
    };
    for (&t, y) in grid.iter().zip(&states) {
        let s = (curve.s)(t);
        let ds = (curve.ds)(t);
        if s.iter().any(|c| !(c.norm() < crate::central::CHART_ESCAPE)) {
            return Err(Error::Chart(format!("curve leaves the chart at t = {t}")));
        }
        let p = ShapePoint { r: 1.0, theta: y[0], s: s.clone() };
        let v = ShapeVelocity {
            rho: 0.0,
            theta_dot: spin_rate(&s, &ds),
            omega: ds.clone(),
        };
        let z = from_chart(&p);
        let zeta = chart_velocity(&p, &v);
        let split = saari_decompose(&z, &zeta)?;
        out.j_residual.push(angular_momentum(&z, &zeta).abs());
        out.rotation_norm.push(norm_sq(&split.rotation).sqrt());
        out.speed.push(fs_norm_sq(&s, &ds).sqrt());
        out.spin_bound.push(FsMetric::new(&s).spin_bound());
        out.s1.push((s[0].re, s[0].im));
        out.theta.push(y[0]);
        out.arclength.push(y[1]);
        out.winding.push(y[2]);
    }
    if let Some(cf) = &out.closed_form {
        let mut abs: f64 = 0.0;
        let mut rel: f64 = 0.0;
        for (a, b) in out.theta.iter().zip(cf) {
            let e = (a - b).abs();
            abs = abs.max(e);
            let d = (b - theta0).abs();
            if d > 0.0 {
                rel = rel.max(e / d);
            }
        }
        out.max_abs_err = Some(abs);
        out.max_rel_err = Some(rel);
    }
    out.diverged = out.theta.iter().any(|th| (th - theta0).abs() > opts.threshold)
        && out.speed.last() < out.speed.first();
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct SpinCertificate {
    /// Fit `theta ~ a + b ln(t + 1)`.
    pub a: f64,
    pub b: f64,
    pub fit_rms: f64,
    /// `|theta - theta0|` crossed the threshold while the shape speed decayed.
    pub diverges: bool,
    /// `theta(t) - theta(t0) <= -1/2 int Omega(s, s')` at every sample (strict where the integral is positive).
    pub inequality_holds: bool,
    pub speed_final: f64,
    pub arclength_final: f64,
}

/// Fits the logarithmic spin law and checks the comparison inequality
/// `theta(t) - theta(t0) < -1/2 int r^2 psi'` valid inside the unit disc.
pub fn infinite_spin_certificate(result: &LiftResult, threshold: f64) -> Result<SpinCertificate> {
    let n = result.time.len();
    if n < 3 {
        return Err(Error::Fit(format!("{n} samples are too few")));
    }
    let x: Vec<f64> = result.time.iter().map(|t| (t + 1.0).ln()).collect();
    let m = n as f64;
    let mx = x.iter().sum::<f64>() / m;
    let my = result.theta.iter().sum::<f64>() / m;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Fit("time samples do not vary".into()));
    }
    let sxy: f64 = x.iter().zip(&result.theta).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let fit_rms = (x
        .iter()
        .zip(&result.theta)
        .map(|(xi, yi)| (yi - a - b * xi).powi(2))
        .sum::<f64>()
        / m)
        .sqrt();
    if !fit_rms.is_finite() {
        return Err(Error::Fit("non-finite residual".into()));
    }
    let theta0 = result.theta[0];
    let scale = 1.0 + result.theta.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let inequality_holds = (1..n).all(|i| {
        let lhs = result.theta[i] - theta0;
        let rhs = -0.5 * result.winding[i];
        if result.winding[i] > 1e-12 * scale { lhs < rhs } else { lhs <= rhs + 1e-12 * scale }
    });
    let speed_final = *result.speed.last().unwrap();
    Ok(SpinCertificate {
        a,
        b,
        fit_rms,
        diverges: result.theta.iter().any(|th| (th - theta0).abs() > threshold) && speed_final < result.speed[0],
        inequality_holds,
        speed_final,
        arclength_final: *result.arclength.last().unwrap(),
    })
}

/// `||(s,1)||^2` along the curve; stays below 2 inside the unit disc.
pub fn chart_weight(curve: &ShapeCurve, t: f64) -> f64 {
    affine_norm_sq(&(curve.s)(t))
}
