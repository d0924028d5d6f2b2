//! Reduced equations of motion for zero angular momentum and their
//! McGehee blow-up at total collision, with the rotation angle and the
//! Fubini-Study arclength of the shape curve carried along as extra states.
//!
//! Both fields share the state layout `[r, x, s, sv, theta, L]`, where `x` is
//! the radial velocity (`rho` or `v`), `s` the chart shape and `sv` the shape
//! velocity (`omega` or `w`), each shape vector in interleaved real layout.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::central::{find_cc, restpoint_spectrum, CentralConfig, NewtonOptions};
use crate::error::{Error, Result};
use crate::geometry::FsMetric;
use crate::layout::{from_real, rotate_quarter, to_real};
use crate::mass::MassSystem;
use crate::ode::{Control, Dop853, OdeSystem, Reversed, Stats};

/// Index helpers for the augmented state.
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    /// Real dimension of a shape vector, 2(n - 2).
    pub m2: usize,
}

impl Layout {
    pub fn new(sys: &MassSystem) -> Self {
        Self {
            m2: 2 * sys.shape_dim(),
        }
    }

    pub fn dim(&self) -> usize {
        4 + 2 * self.m2
    }

    pub fn s(&self) -> std::ops::Range<usize> {
        2..2 + self.m2
    }

    pub fn velocity(&self) -> std::ops::Range<usize> {
        2 + self.m2..2 + 2 * self.m2
    }

    pub fn theta(&self) -> usize {
        2 + 2 * self.m2
    }

    pub fn arclength(&self) -> usize {
        3 + 2 * self.m2
    }
}

/// Shape quantities shared by both vector fields.
struct ShapeTerms {
    /// A^-1 grad V.
    fs_grad: DVector<f64>,
    /// A^-1 (grad_s F / 2 - DA[w] w).
    geodesic: DVector<f64>,
    potential: f64,
    f: f64,
    spin: f64,
}

fn shape_terms(sys: &MassSystem, s: &[f64], w: &[f64]) -> Result<ShapeTerms> {
    let sc = from_real(s);
    let metric = FsMetric::new(&sc);
    let wv = DVector::from_column_slice(w);
    let grad = sys.shape_gradient(&sc)?;
    let potential = sys.shape_potential(&sc)?;
    let fs_grad = metric.solve(&grad);
    let geodesic = metric.solve(&(metric.grad_f(&wv) * 0.5 - metric.derivative(&wv) * &wv));
    let f = metric.quad(&wv).max(0.0);
    let n = 1.0 + s.iter().map(|x| x * x).sum::<f64>();
    let js = rotate_quarter(s);
    let spin = -js.dot(&wv) / n;
    Ok(ShapeTerms {
        fs_grad,
        geodesic,
        potential,
        f,
        spin,
    })
}

/// Energy-type residual and system access shared by both fields.
pub trait CollisionFlow: OdeSystem {
    fn system(&self) -> &MassSystem;
    fn layout(&self) -> Layout {
        Layout::new(self.system())
    }
    /// Deviation from the energy relation at the state `y`.
    fn energy_residual(&self, y: &[f64]) -> Result<f64>;
}

/// Reduced Euler-Lagrange equations in physical time `t`, state
/// `[r, rho, s, omega, theta, L]`.
#[derive(Debug, Clone)]
pub struct ReducedField<'a> {
    pub sys: &'a MassSystem,
    /// Energy level used by the residual.
    pub h: f64,
}

impl OdeSystem for ReducedField<'_> {
    fn dim(&self) -> usize {
        self.layout().dim()
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let lay = self.layout();
        let r = y[0];
        let rho = y[1];
        if !(r > 0.0) {
            return Err(Error::Degenerate(format!("reduced field needs r > 0, got {r}")));
        }
        let s = &y[lay.s()];
        let om = &y[lay.velocity()];
        let t = shape_terms(self.sys, s, om)?;
        dy[0] = rho;
        dy[1] = r * t.f - t.potential / (r * r);
        dy[lay.s()].copy_from_slice(om);
        let r3 = r * r * r;
        for (k, i) in lay.velocity().enumerate() {
            dy[i] = t.fs_grad[k] / r3 + t.geodesic[k] - 2.0 * rho * om[k] / r;
        }
        dy[lay.theta()] = t.spin;
        dy[lay.arclength()] = t.f.sqrt();
        Ok(())
    }
}

impl CollisionFlow for ReducedField<'_> {
    fn system(&self) -> &MassSystem {
        self.sys
    }

    /// `rho^2/2 + r^2 F/2 - V/r - h`.
    fn energy_residual(&self, y: &[f64]) -> Result<f64> {
        let lay = self.layout();
        let (v, f) = potential_and_f(self.sys, &y[lay.s()], &y[lay.velocity()])?;
        let r = y[0];
        Ok(0.5 * y[1] * y[1] + 0.5 * r * r * f - v / r - self.h)
    }
}

/// Blown-up equations in the rescaled time `tau`, state `[r, v, s, w, theta, L]`.
#[derive(Debug, Clone)]
pub struct BlownUpField<'a> {
    pub sys: &'a MassSystem,
    pub h: f64,
    /// Use `v' = F/2 + r h` instead of `v' = v^2/2 + F - V`. The two agree on
    /// the energy surface; the energy form keeps the residual constant
    /// instead of scaling it by `exp(int v)`, which matters when running
    /// backwards in time where that factor grows.
    pub energy_form: bool,
}

impl<'a> BlownUpField<'a> {
    pub fn new(sys: &'a MassSystem, h: f64) -> Self {
        Self {
            sys,
            h,
            energy_form: false,
        }
    }

    pub fn energy_form(sys: &'a MassSystem, h: f64) -> Self {
        Self {
            sys,
            h,
            energy_form: true,
        }
    }
}

impl OdeSystem for BlownUpField<'_> {
    fn dim(&self) -> usize {
        self.layout().dim()
    }

    fn rhs(&self, _tau: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let lay = self.layout();
        let r = y[0];
        let v = y[1];
        let s = &y[lay.s()];
        let w = &y[lay.velocity()];
        let t = shape_terms(self.sys, s, w)?;
        dy[0] = v * r;
        dy[1] = if self.energy_form {
            0.5 * t.f + r * self.h
        } else {
            0.5 * v * v + t.f - t.potential
        };
        dy[lay.s()].copy_from_slice(w);
        for (k, i) in lay.velocity().enumerate() {
            dy[i] = t.fs_grad[k] + t.geodesic[k] - 0.5 * v * w[k];
        }
        dy[lay.theta()] = t.spin;
        dy[lay.arclength()] = t.f.sqrt();
        Ok(())
    }
}

impl CollisionFlow for BlownUpField<'_> {
    fn system(&self) -> &MassSystem {
        self.sys
    }

    /// `v^2/2 + F/2 - V - r h`.
    fn energy_residual(&self, y: &[f64]) -> Result<f64> {
        let lay = self.layout();
        let (v, f) = potential_and_f(self.sys, &y[lay.s()], &y[lay.velocity()])?;
        Ok(0.5 * y[1] * y[1] + 0.5 * f - v - y[0] * self.h)
    }
}

/// The blown-up field restricted to the invariant manifold `{s = s0, w = 0}`
/// over a central configuration `s0`: `r' = v r`, `v' = v^2/2 - V(s0)`.
///
/// Homothetic orbits are unstable in the shape directions (`Re lambda_+ > 0`),
/// so integrating the full field amplifies the rounding error of
/// `grad V(s0)` like `exp(lambda_+ tau)`; on long runs it leaves the
/// configuration. Restricting to the invariant manifold integrates the same
/// orbit without that amplification.
#[derive(Debug, Clone)]
pub struct HomotheticField<'a> {
    pub sys: &'a MassSystem,
    pub h: f64,
    s0: Vec<Complex64>,
    potential: f64,
}

impl<'a> HomotheticField<'a> {
    /// Fails unless `|grad V(s0)| <= tol`.
    pub fn new(sys: &'a MassSystem, h: f64, s0: &[Complex64], tol: f64) -> Result<Self> {
        let g = sys.shape_gradient(s0)?.norm();
        if g > tol {
            return Err(Error::Precondition(format!(
                "homothetic orbits need a central configuration (|grad V| = {g:e})"
            )));
        }
        Ok(Self {
            sys,
            h,
            s0: s0.to_vec(),
            potential: sys.shape_potential(s0)?,
        })
    }

    pub fn shape(&self) -> &[Complex64] {
        &self.s0
    }

    /// State at size `r` on the energy surface, collapsing (`v < 0`).
    pub fn initial_state(&self, r: f64) -> Result<BlownUpState> {
        let zero = vec![Complex64::new(0.0, 0.0); self.s0.len()];
        BlownUpState::on_energy_surface(self.sys, self.h, r, self.s0.clone(), zero)
    }
}

impl OdeSystem for HomotheticField<'_> {
    fn dim(&self) -> usize {
        self.layout().dim()
    }

    fn rhs(&self, _tau: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        dy.iter_mut().for_each(|d| *d = 0.0);
        dy[0] = y[1] * y[0];
        dy[1] = 0.5 * y[1] * y[1] - self.potential;
        Ok(())
    }
}

impl CollisionFlow for HomotheticField<'_> {
    fn system(&self) -> &MassSystem {
        self.sys
    }

    fn energy_residual(&self, y: &[f64]) -> Result<f64> {
        BlownUpField::new(self.sys, self.h).energy_residual(y)
    }
}

/// Least-squares slope of `ln r` against time over the given samples.
pub fn log_radius_slope(samples: &[Sample]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.r > 0.0)
        .map(|s| (s.time, s.r.ln()))
        .collect();
    least_squares_slope(&pts)
}

fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

impl<F: CollisionFlow> CollisionFlow for Reversed<'_, F> {
    fn system(&self) -> &MassSystem {
        self.0.system()
    }

    fn energy_residual(&self, y: &[f64]) -> Result<f64> {
        self.0.energy_residual(y)
    }
}

fn potential_and_f(sys: &MassSystem, s: &[f64], w: &[f64]) -> Result<(f64, f64)> {
    let sc = from_real(s);
    let metric = FsMetric::new(&sc);
    Ok((sys.shape_potential(&sc)?, metric.quad(&DVector::from_column_slice(w))))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedState {
    pub r: f64,
    pub rho: f64,
    pub s: Vec<Complex64>,
    pub omega: Vec<Complex64>,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlownUpState {
    pub r: f64,
    pub v: f64,
    pub s: Vec<Complex64>,
    pub w: Vec<Complex64>,
    pub tau: f64,
}

fn pack(r: f64, x: f64, s: &[Complex64], sv: &[Complex64], theta: f64) -> Vec<f64> {
    let mut y = vec![r, x];
    y.extend(to_real(s).iter());
    y.extend(to_real(sv).iter());
    y.push(theta);
    y.push(0.0);
    y
}

impl ReducedState {
    /// Augmented state vector with the given initial angle and zero arclength.
    pub fn to_vec(&self, theta: f64) -> Vec<f64> {
        pack(self.r, self.rho, &self.s, &self.omega, theta)
    }

    /// The same point in blown-up variables `v = sqrt(r) rho`, `w = r^(3/2) omega`.
    pub fn blow_up(&self) -> BlownUpState {
        let r32 = self.r * self.r.sqrt();
        BlownUpState {
            r: self.r,
            v: self.r.sqrt() * self.rho,
            s: self.s.clone(),
            w: self.omega.iter().map(|c| c * r32).collect(),
            tau: 0.0,
        }
    }
}

impl BlownUpState {
    pub fn to_vec(&self, theta: f64) -> Vec<f64> {
        pack(self.r, self.v, &self.s, &self.w, theta)
    }

    /// State at `(r, s, w)` with `v <= 0` chosen on the energy surface
    /// `v^2/2 + F/2 - V = r h`.
    pub fn on_energy_surface(sys: &MassSystem, h: f64, r: f64, s: Vec<Complex64>, w: Vec<Complex64>) -> Result<Self> {
        let (pot, f) = potential_and_f(sys, to_real(&s).as_slice(), to_real(&w).as_slice())?;
        let v2 = 2.0 * (pot - 0.5 * f + r * h);
        if v2 < 0.0 {
            return Err(Error::Precondition(format!(
                "no real radial velocity on the energy surface (v^2 = {v2:e})"
            )));
        }
        Ok(Self {
            r,
            v: -v2.sqrt(),
            s,
            w,
            tau: 0.0,
        })
    }
}

/// One output sample; `radial` is `rho` or `v` and `velocity` is `omega` or `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub time: f64,
    pub r: f64,
    pub radial: f64,
    pub s: Vec<Complex64>,
    pub velocity: Vec<Complex64>,
    pub theta: f64,
    pub arclength: f64,
    pub energy_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Termination {
    Completed,
    /// Restpoint capture criterion met.
    Captured,
    /// The shape left the chart ball of the configured radius.
    ChartExit,
}

/// Linearized contribution of the remaining approach to a restpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Tail {
    pub s0: Vec<Complex64>,
    pub theta: f64,
    pub arclength: f64,
}

#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub samples: Vec<Sample>,
    pub termination: Termination,
    /// Max |energy residual| over samples and accepted steps.
    pub energy_drift: f64,
    pub stats: Stats,
    pub tail: Option<Tail>,
}

impl TrajectoryRecord {
    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }
}

#[derive(Debug, Clone)]
pub struct Controls {
    pub rtol: f64,
    pub atol: f64,
    /// Number of uniformly spaced output samples (including both ends).
    pub samples: usize,
    /// Stop once `||w||_FS + |grad V| + |v - v*| < tol` with `v* = -sqrt(2V)`.
    pub capture_tol: Option<f64>,
    /// Stop when `|s|` exceeds this.
    pub chart_radius: f64,
    pub max_steps: usize,
    /// Step size cap. `r` decays exponentially and soon falls below `atol`,
    /// where the error control no longer sees it; the cap keeps its relative
    /// accuracy.
    pub h_max: f64,
}

impl Default for Controls {
    fn default() -> Self {
        Self {
            rtol: 1e-12,
            atol: 1e-14,
            samples: 501,
            capture_tol: None,
            chart_radius: 1e3,
            max_steps: 1_000_000,
            h_max: 0.1,
        }
    }
}

fn sample_at<F: CollisionFlow + ?Sized>(field: &F, time: f64, y: &[f64]) -> Result<Sample> {
    let lay = field.layout();
    Ok(Sample {
        time,
        r: y[0],
        radial: y[1],
        s: from_real(&y[lay.s()]),
        velocity: from_real(&y[lay.velocity()]),
        theta: y[lay.theta()],
        arclength: y[lay.arclength()],
        energy_residual: field.energy_residual(y)?,
    })
}

/// Restpoint capture metric `||w||_FS + |grad V(s)| + |v + sqrt(2 V(s))|`.
pub fn capture_metric(sys: &MassSystem, y: &[f64]) -> Result<f64> {
    let lay = Layout::new(sys);
    let s = from_real(&y[lay.s()]);
    let metric = FsMetric::new(&s);
    let w = DVector::from_column_slice(&y[lay.velocity()]);
    let pot = sys.shape_potential(&s)?;
    let grad = sys.shape_gradient(&s)?;
    Ok(metric.quad(&w).max(0.0).sqrt() + grad.norm() + (y[1] + (2.0 * pot).sqrt()).abs())
}

/// Integrates an augmented collision flow over `[t0, t1]` (either direction),
/// sampling on a uniform grid through dense output.
pub fn integrate<F: CollisionFlow + ?Sized>(
    field: &F,
    y0: &[f64],
    t0: f64,
    t1: f64,
    controls: &Controls,
) -> Result<TrajectoryRecord> {
    let lay = field.layout();
    if y0.len() != lay.dim() {
        return Err(Error::Dimension {
            expected: lay.dim(),
            got: y0.len(),
        });
    }
    let solver = Dop853 {
        max_steps: controls.max_steps,
        h_max: Some(controls.h_max),
        ..Dop853::with_tolerances(controls.rtol, controls.atol)
    };
    let count = controls.samples.max(2);
    let grid: Vec<f64> = (0..count)
        .map(|k| if k + 1 == count { t1 } else { t0 + (t1 - t0) * k as f64 / (count - 1) as f64 })
        .collect();
    let mut samples = vec![sample_at(field, t0, y0)?];
    let mut next = 1;
    let mut energy_drift = samples[0].energy_residual.abs();
    let mut termination = Termination::Completed;
    let mut buf = vec![0.0; lay.dim()];

    let outcome = solver.solve(field, t0, y0, t1, |step| {
        while next < grid.len() && step.contains(grid[next]) {
            step.interpolate(grid[next], &mut buf);
            let smp = sample_at(field, grid[next], &buf)?;
            energy_drift = energy_drift.max(smp.energy_residual.abs());
            samples.push(smp);
            next += 1;
        }
        energy_drift = energy_drift.max(field.energy_residual(step.y)?.abs());
        let s_norm = step.y[lay.s()].iter().map(|x| x * x).sum::<f64>().sqrt();
        if s_norm > controls.chart_radius {
            termination = Termination::ChartExit;
            return Ok(Control::Stop);
        }
        if let Some(tol) = controls.capture_tol {
            if capture_metric(field.system(), step.y)? < tol {
                termination = Termination::Captured;
                return Ok(Control::Stop);
            }
        }
        Ok(Control::Continue)
    })?;
    if outcome.stopped && samples.last().map(|s| s.time) != Some(outcome.t) {
        samples.push(sample_at(field, outcome.t, &outcome.y)?);
    }
    Ok(TrajectoryRecord {
        samples,
        termination,
        energy_drift,
        stats: outcome.stats,
        tail: None,
    })
}

/// Remaining spin and arclength of the straight-line approach from `s` to
/// the restpoint shape `s0`: `Omega(s0, s - s0)/N0` and `||s - s0||_FS`.
pub fn linear_tail(s0: &[Complex64], s: &[Complex64]) -> Tail {
    let d: Vec<Complex64> = s.iter().zip(s0).map(|(a, b)| a - b).collect();
    let n0 = crate::geometry::affine_norm_sq(s0);
    Tail {
        s0: s0.to_vec(),
        theta: crate::geometry::omega_form(s0, &d) / n0,
        arclength: crate::geometry::fs_norm_sq(s0, &d).sqrt(),
    }
}

/// Attaches a linearized tail to a captured record by polishing the final
/// shape to the nearby central configuration.
pub fn attach_tail(sys: &MassSystem, record: &mut TrajectoryRecord) -> Result<()> {
    let last = record
        .samples
        .last()
        .ok_or_else(|| Error::Degenerate("empty trajectory".into()))?;
    let cc = find_cc(sys, &last.s, &NewtonOptions::default())?;
    record.tail = Some(linear_tail(&cc.s0, &last.s));
    Ok(())
}

#[derive(Debug, Clone)]
pub struct StableManifoldOptions {
    /// Distance from the restpoint in the shape directions at the start of the
    /// backward run.
    pub delta: f64,
    /// Size `r` at the start of the backward run (0 stays on the collision manifold).
    pub r_end: f64,
    pub h: f64,
    /// Backward run stops once `||s - s0||_FS` exceeds this.
    pub exit_distance: f64,
    /// Backward run stops once `r` exceeds this.
    pub r_max: f64,
    pub tau_max: f64,
    /// Weights of the stable eigen-directions; `None` weights them equally.
    pub weights: Option<Vec<f64>>,
    pub controls: Controls,
}

impl Default for StableManifoldOptions {
    fn default() -> Self {
        Self {
            delta: 1e-8,
            r_end: 1e-12,
            h: -1.0,
            exit_distance: 0.05,
            r_max: 1.0,
            tau_max: 60.0,
            weights: None,
            controls: Controls {
                samples: 2001,
                ..Controls::default()
            },
        }
    }
}

/// Stable eigen-directions `(e, lambda_-)` of the restpoint in the shape
/// block: eigenvectors of `A^-1 H` with `c > 0`, normalized in the FS metric.
pub fn stable_shape_modes(sys: &MassSystem, cc: &CentralConfig) -> Result<Vec<(DVector<f64>, f64)>> {
    let metric = FsMetric::new(&cc.s0);
    let h = sys.shape_hessian(&cc.s0)?;
    let l = metric.cholesky().l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("singular metric factor".into()))?;
    let wmat = &linv * &h * linv.transpose();
    let eig = ((&wmat + wmat.transpose()) * 0.5).symmetric_eigen();
    let mut modes = Vec::new();
    for (k, &c) in eig.eigenvalues.iter().enumerate() {
        if c > 0.0 {
            // A^-1 H (L^-T y) = c L^-T y
            let e = linv.transpose() * eig.eigenvectors.column(k);
            let e = &e / metric.quad(&e).sqrt();
            let (_, minus) = restpoint_spectrum(cc.v0, c);
            modes.push((e, minus.re));
        }
    }
    if modes.is_empty() {
        return Err(Error::Precondition(
            "central configuration has no stable shape directions".into(),
        ));
    }
    Ok(modes)
}

/// A collision orbit on the stable manifold of the restpoint over `cc`.
///
/// The blown-up flow is run backwards from a point displaced by `delta`
/// along the stable eigen-directions of the linearization; backward time
/// makes the stable manifold attracting. The samples are then returned in
/// forward time, starting at the far end, with `theta` and `L` measured from
/// there, and a linearized tail for the remaining approach is attached.
pub fn stable_manifold_orbit(
    sys: &MassSystem,
    cc: &CentralConfig,
    opts: &StableManifoldOptions,
) -> Result<TrajectoryRecord> {
    let modes = stable_shape_modes(sys, cc)?;
    let weights = opts.weights.clone().unwrap_or_else(|| vec![1.0; modes.len()]);
    if weights.len() != modes.len() {
        return Err(Error::Dimension {
            expected: modes.len(),
            got: weights.len(),
        });
    }
    let dim = modes[0].0.len();
    let mut ds = DVector::zeros(dim);
    let mut dw = DVector::zeros(dim);
    for ((e, lam), wt) in modes.iter().zip(&weights) {
        ds += e * *wt;
        dw += e * (*wt * *lam);
    }
    let metric = FsMetric::new(&cc.s0);
    let scale = opts.delta / metric.quad(&ds).sqrt();
    let s = to_real(&cc.s0) + ds * scale;
    let w = dw * scale;
    let start = BlownUpState::on_energy_surface(
        sys,
        opts.h,
        opts.r_end,
        from_real(s.as_slice()),
        from_real(w.as_slice()),
    )?;

    let field = BlownUpField::energy_form(sys, opts.h);
    let back = Reversed(&field);
    let lay = field.layout();
    let s0r = to_real(&cc.s0);
    let exit = opts.exit_distance;
    let r_max = opts.r_max;

    // Find the exit time first, then resample on a uniform grid over it.
    let solver = Dop853 {
        h_max: Some(opts.controls.h_max),
        ..Dop853::with_tolerances(opts.controls.rtol, opts.controls.atol)
    };
    let probe = solver.solve(&back, 0.0, &start.to_vec(0.0), opts.tau_max, |step| {
        let d = DVector::from_column_slice(&step.y[lay.s()]) - &s0r;
        Ok(if metric.quad(&d).sqrt() > exit || step.y[0] > r_max {
            Control::Stop
        } else {
            Control::Continue
        })
    })?;
    let mut rec = integrate(&back, &start.to_vec(0.0), 0.0, probe.t, &opts.controls)?;

    let total = probe.t;
    let last = rec
        .samples
        .last()
        .cloned()
        .ok_or_else(|| Error::Degenerate("empty backward run".into()))?;
    rec.samples.reverse();
    for smp in rec.samples.iter_mut() {
        smp.time = total - smp.time;
        smp.theta -= last.theta;
        smp.arclength -= last.arclength;
    }
    let end = rec.samples.last().expect("nonempty");
    rec.tail = Some(linear_tail(&cc.s0, &end.s));
    Ok(rec)
}

/// Inputs to the spin/arclength accumulator: time, unwrapped angle, shape
/// arclength and the spin bound constant K(s) at each sample.
#[derive(Debug, Clone, Default)]
pub struct SpinSeries {
    pub time: Vec<f64>,
    pub theta: Vec<f64>,
    pub arclength: Vec<f64>,
    pub bound: Vec<f64>,
    /// Extrapolated remaining (theta, L), if any.
    pub tail: Option<(f64, f64)>,
}

impl SpinSeries {
    pub fn from_record(rec: &TrajectoryRecord) -> Self {
        let mut out = SpinSeries::default();
        for smp in &rec.samples {
            out.time.push(smp.time);
            out.theta.push(smp.theta);
            out.arclength.push(smp.arclength);
            out.bound.push(FsMetric::new(&smp.s).spin_bound());
        }
        out.tail = rec.tail.as_ref().map(|t| (t.theta, t.arclength));
        out
    }
}

#[derive(Debug, Clone)]
pub struct SpinOptions {
    /// Tail variation below which theta and L count as converged.
    pub tol: f64,
    /// Fraction of the time range treated as the tail.
    pub tail_fraction: f64,
}

impl Default for SpinOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            tail_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpinReport {
    /// Last sampled angle plus the extrapolated tail.
    pub theta_final: f64,
    pub arclength_final: f64,
    pub theta_converged: bool,
    pub arclength_converged: bool,
    /// Raised when theta is still moving over the tail.
    pub diverging: bool,
    /// Earliest sample time beyond which theta varies by less than `tol`.
    pub cauchy_time: Option<f64>,
    /// Largest `|dtheta| - K_max dL` over consecutive samples (<= 0 when the bound holds).
    pub bound_excess: f64,
    pub bound_holds: bool,
    /// Exponential decay rate of the arclength increments over the second half.
    pub decay_rate: Option<f64>,
}

fn range(v: &[f64]) -> f64 {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if v.is_empty() { 0.0 } else { hi - lo }
}

/// Least-squares decay rate of the arclength increments `dL/dt` over the
/// samples with time in the last `fraction` of the range.
pub fn decay_rate(time: &[f64], arclength: &[f64], fraction: f64) -> Option<f64> {
    let n = time.len();
    if n < 4 {
        return None;
    }
    let cut = time[n - 1] - fraction * (time[n - 1] - time[0]);
    let pts: Vec<(f64, f64)> = (1..n)
        .filter(|&i| time[i - 1] >= cut)
        .filter_map(|i| {
            let dt = time[i] - time[i - 1];
            let dl = arclength[i] - arclength[i - 1];
            (dt > 0.0 && dl > 0.0).then(|| (0.5 * (time[i] + time[i - 1]), (dl / dt).ln()))
        })
        .collect();
    if pts.len() < 3 {
        return None;
    }
    least_squares_slope(&pts).map(|k| -k)
}

pub fn spin_and_arclength(series: &SpinSeries, opts: &SpinOptions) -> SpinReport {
    let n = series.time.len();
    let (tail_theta, tail_l) = series.tail.unwrap_or((0.0, 0.0));
    if n == 0 {
        return SpinReport {
            theta_final: tail_theta,
            arclength_final: tail_l,
            theta_converged: true,
            arclength_converged: true,
            diverging: false,
            cauchy_time: None,
            bound_excess: 0.0,
            bound_holds: true,
            decay_rate: None,
        };
    }
    let t0 = series.time[0];
    let t1 = series.time[n - 1];
    let cut = t1 - opts.tail_fraction * (t1 - t0);
    let first = series.time.iter().position(|&t| t >= cut).unwrap_or(n - 1);
    let theta_var = range(&series.theta[first..]) + tail_theta.abs();
    let l_var = range(&series.arclength[first..]) + tail_l.abs();

    // Sweep backwards for the earliest Cauchy time.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut cauchy_time = None;
    for k in (0..n).rev() {
        lo = lo.min(series.theta[k]);
        hi = hi.max(series.theta[k]);
        if hi - lo + tail_theta.abs() < opts.tol {
            cauchy_time = Some(series.time[k]);
        } else {
            break;
        }
    }

    // Slack covers the variation of K within a sampling interval and rounding.
    let scale = 1.0 + series.theta.iter().chain(&series.arclength).fold(0.0f64, |m, x| m.max(x.abs()));
    let mut bound_excess: f64 = 0.0;
    let mut bound_holds = true;
    for k in 1..n {
        let dtheta = (series.theta[k] - series.theta[k - 1]).abs();
        let dl = (series.arclength[k] - series.arclength[k - 1]).abs();
        let kmax = series.bound[k].max(series.bound[k - 1]);
        let excess = dtheta - kmax * dl;
        bound_excess = if k == 1 { excess } else { bound_excess.max(excess) };
        bound_holds &= dtheta <= kmax * dl * (1.0 + 1e-2) + 1e-12 * scale;
    }

    SpinReport {
        theta_final: series.theta[n - 1] + tail_theta,
        arclength_final: series.arclength[n - 1] + tail_l,
        theta_converged: theta_var < opts.tol,
        arclength_converged: l_var < opts.tol,
        diverging: theta_var >= opts.tol,
        cauchy_time,
        bound_excess,
        bound_holds,
        decay_rate: decay_rate(&series.time, &series.arclength, 0.5),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::to_chart;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};

    fn lagrange(sys: &MassSystem) -> CentralConfig {
        let r = 1.0 / 3f64.sqrt();
        let q: Vec<Complex64> = (0..3)
            .map(|k| Complex64::from_polar(r, 2.0 * std::f64::consts::PI * k as f64 / 3.0))
            .collect();
        let s = to_chart(&sys.from_positions(&q).unwrap()).unwrap().s;
        find_cc(sys, &s, &NewtonOptions::default()).unwrap()
    }

    fn random_state(rng: &mut impl Rng, sys: &MassSystem) -> Vec<f64> {
        let lay = Layout::new(sys);
        let mut y = vec![0.0; lay.dim()];
        y[0] = rng.random_range(0.2..2.0);
        y[1] = rng.random_range(-1.0..1.0);
        for i in lay.s() {
            y[i] = rng.random_range(-0.8..0.8);
        }
        for i in lay.velocity() {
            y[i] = rng.random_range(-0.5..0.5);
        }
        y
    }

    #[test]
    fn restpoint_is_an_equilibrium() {
        let sys = MassSystem::equal(3).unwrap();
        let cc = lagrange(&sys);
        let field = BlownUpField::new(&sys, -1.0);
        let y = BlownUpState {
            r: 0.0,
            v: cc.v0,
            s: cc.s0.clone(),
            w: vec![Complex64::new(0.0, 0.0); 1],
            tau: 0.0,
        }
        .to_vec(0.0);
        let mut dy = vec![0.0; y.len()];
        field.rhs(0.0, &y, &mut dy).unwrap();
        assert!(dy.iter().all(|d| d.abs() < 1e-12), "{dy:?}");
        assert!(field.energy_residual(&y).unwrap().abs() < 1e-12);
    }

    #[test]
    fn homothetic_data_keeps_shape_fixed() {
        let sys = MassSystem::equal(3).unwrap();
        let cc = lagrange(&sys);
        let field = ReducedField { sys: &sys, h: -1.0 };
        let y = ReducedState {
            r: 1.3,
            rho: -0.4,
            s: cc.s0.clone(),
            omega: vec![Complex64::new(0.0, 0.0)],
            t: 0.0,
        }
        .to_vec(0.0);
        let mut dy = vec![0.0; y.len()];
        field.rhs(0.0, &y, &mut dy).unwrap();
        let lay = field.layout();
        assert!(dy[lay.s()].iter().chain(&dy[lay.velocity()]).all(|d| d.abs() < 1e-12));
        assert_eq!(dy[lay.theta()], 0.0);
    }

    /// d/dt of the energy along the field, assembled from the analytic
    /// pieces `grad_s F . s' + 2 w^T A w'` etc.
    fn energy_rate_blown_up(sys: &MassSystem, h: f64, y: &[f64], dy: &[f64]) -> f64 {
        let lay = Layout::new(sys);
        let sc = from_real(&y[lay.s()]);
        let metric = FsMetric::new(&sc);
        let w = DVector::from_column_slice(&y[lay.velocity()]);
        let sdot = DVector::from_column_slice(&dy[lay.s()]);
        let wdot = DVector::from_column_slice(&dy[lay.velocity()]);
        let grad = sys.shape_gradient(&sc).unwrap();
        let f_rate = metric.grad_f(&w).dot(&sdot) + 2.0 * w.dot(&(metric.matrix() * &wdot));
        y[1] * dy[1] + 0.5 * f_rate - grad.dot(&sdot) - h * dy[0]
    }

    #[test]
    fn energy_is_conserved_by_both_fields() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let sys = MassSystem::new(vec![1.0, 2.0, 1.5, 0.8]).unwrap();
        for _ in 0..50 {
            let y = random_state(&mut rng, &sys);
            let blown = BlownUpField::new(&sys, 0.0);
            // choose h so that y lies on its energy surface
            let h = blown.energy_residual(&y).unwrap() / y[0];
            let blown = BlownUpField::new(&sys, h);
            let mut dy = vec![0.0; y.len()];
            blown.rhs(0.0, &y, &mut dy).unwrap();
            assert!(energy_rate_blown_up(&sys, h, &y, &dy).abs() < 1e-10);

            let red = ReducedField { sys: &sys, h: 0.0 };
            red.rhs(0.0, &y, &mut dy).unwrap();
            let rate = energy_rate_reduced(&sys, &y, &dy);
            let lay = Layout::new(&sys);
            let scale = 1.0 + sys.shape_potential(&from_real(&y[lay.s()])).unwrap() / y[0].powi(2);
            assert!(rate.abs() < 1e-12 * scale, "reduced energy rate {rate:e}");
        }
    }

    fn energy_rate_reduced(sys: &MassSystem, y: &[f64], dy: &[f64]) -> f64 {
        let lay = Layout::new(sys);
        let sc = from_real(&y[lay.s()]);
        let metric = FsMetric::new(&sc);
        let om = DVector::from_column_slice(&y[lay.velocity()]);
        let sdot = DVector::from_column_slice(&dy[lay.s()]);
        let omdot = DVector::from_column_slice(&dy[lay.velocity()]);
        let grad = sys.shape_gradient(&sc).unwrap();
        let pot = sys.shape_potential(&sc).unwrap();
        let (r, rho) = (y[0], y[1]);
        let f = metric.quad(&om);
        let f_rate = metric.grad_f(&om).dot(&sdot) + 2.0 * om.dot(&(metric.matrix() * &omdot));
        rho * dy[1] + r * rho * f + 0.5 * r * r * f_rate - grad.dot(&sdot) / r + pot * rho / (r * r)
    }

    /// Christoffel symbols of A from central differences of the matrix.
    fn christoffel_accel(s: &[f64], w: &[f64]) -> DVector<f64> {
        let dim = s.len();
        let a_at = |x: &[f64]| FsMetric::new(&from_real(x)).matrix().clone();
        let h = 1e-3;
        let mut da: Vec<DMatrix<f64>> = Vec::new();
        for k in 0..dim {
            let shift = |eps: f64| {
                let mut x = s.to_vec();
                x[k] += eps;
                a_at(&x)
            };
            da.push((shift(-2.0 * h) - shift(2.0 * h) + (shift(h) - shift(-h)) * 8.0) / (12.0 * h));
        }
        let a = a_at(s);
        // Gamma_{l,ij} w^i w^j = (d_i A_lj + d_j A_li - d_l A_ij) w^i w^j / 2
        let mut g = DVector::zeros(dim);
        for l in 0..dim {
            let mut acc = 0.0;
            for i in 0..dim {
                for j in 0..dim {
                    acc += 0.5 * (da[i][(l, j)] + da[j][(l, i)] - da[l][(i, j)]) * w[i] * w[j];
                }
            }
            g[l] = acc;
        }
        -a.cholesky().unwrap().solve(&g)
    }

    #[test]
    fn expanded_acceleration_matches_covariant_form() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let sys = MassSystem::equal(4).unwrap();
        for _ in 0..20 {
            let y = random_state(&mut rng, &sys);
            let lay = Layout::new(&sys);
            let t = shape_terms(&sys, &y[lay.s()], &y[lay.velocity()]).unwrap();
            let cov = christoffel_accel(&y[lay.s()], &y[lay.velocity()]);
            assert!((&t.geodesic - &cov).norm() < 1e-10 * (1.0 + cov.norm()), "{}", (&t.geodesic - &cov).norm());
        }
    }

    #[test]
    fn collision_manifold_is_invariant() {
        let sys = MassSystem::equal(3).unwrap();
        let cc = lagrange(&sys);
        let s = vec![cc.s0[0] + Complex64::new(0.05, 0.02)];
        let w = vec![Complex64::new(0.01, -0.03)];
        let start = BlownUpState::on_energy_surface(&sys, -1.0, 0.0, s, w).unwrap();
        let field = BlownUpField::new(&sys, -1.0);
        let rec = integrate(&field, &start.to_vec(0.0), 0.0, 3.0, &Controls::default()).unwrap();
        assert!(rec.samples.iter().all(|s| s.r == 0.0));
        assert!(rec.energy_drift < 1e-10);
    }

    #[test]
    fn reduced_and_blown_up_solutions_correspond() {
        let sys = MassSystem::equal(3).unwrap();
        let cc = lagrange(&sys);
        let red = ReducedState {
            r: 1.5,
            rho: -0.3,
            s: vec![cc.s0[0] + Complex64::new(0.1, -0.05)],
            omega: vec![Complex64::new(0.05, 0.08)],
            t: 0.0,
        };
        let field = ReducedField { sys: &sys, h: 0.0 };
        let h = field.energy_residual(&red.to_vec(0.0)).unwrap();
        let field = ReducedField { sys: &sys, h };
        let controls = Controls {
            samples: 41,
            ..Controls::default()
        };
        let rec = integrate(&field, &red.to_vec(0.0), 0.0, 0.5, &controls).unwrap();
        let blown = BlownUpField::new(&sys, h);
        let lay = field.layout();
        // Chain rule: d/dtau = r^(3/2) d/dt, checked through centered
        // differences of the sampled reduced solution.
        for k in 1..rec.samples.len() - 1 {
            let smp = &rec.samples[k];
            let state = ReducedState {
                r: smp.r,
                rho: smp.radial,
                s: smp.s.clone(),
                omega: smp.velocity.clone(),
                t: smp.time,
            }
            .blow_up();
            let y = state.to_vec(smp.theta);
            let mut dy = vec![0.0; y.len()];
            blown.rhs(0.0, &y, &mut dy).unwrap();
            let mut yt = vec![0.0; y.len()];
            field
                .rhs(0.0, &red_vec(smp), &mut yt)
                .unwrap();
            let r32 = smp.r * smp.r.sqrt();
            // s' = r^(3/2) s_dot and theta' = r^(3/2) theta_dot
            for i in lay.s() {
                assert!((dy[i] - r32 * yt[i]).abs() < 1e-8);
            }
            assert!((dy[lay.theta()] - r32 * yt[lay.theta()]).abs() < 1e-8);
            // v' = r^(3/2) d/dt (sqrt(r) rho)
            let vdot = 0.5 * smp.radial * smp.radial / smp.r.sqrt() + smp.r.sqrt() * yt[1];
            assert!((dy[1] - r32 * vdot).abs() < 1e-8);
            // w' = r^(3/2) d/dt (r^(3/2) omega)
            for (j, i) in lay.velocity().enumerate() {
                let om = yt[lay.s().start + j];
                let wdot = 1.5 * smp.r.sqrt() * smp.radial * om + r32 * yt[i];
                assert!((dy[i] - r32 * wdot).abs() < 1e-8);
            }
        }
        assert!(rec.energy_drift < 1e-10);
    }

    fn red_vec(smp: &Sample) -> Vec<f64> {
        ReducedState {
            r: smp.r,
            rho: smp.radial,
            s: smp.s.clone(),
            omega: smp.velocity.clone(),
            t: smp.time,
        }
        .to_vec(smp.theta)
    }

    #[test]
    fn homothetic_orbit_in_blown_up_variables() {
        let sys = MassSystem::equal(3).unwrap();
        let cc = lagrange(&sys);
        let field = HomotheticField::new(&sys, -1.0, &cc.s0, 1e-10).unwrap();
        let start = field.initial_state(1.0).unwrap();
        assert!((start.v + 2.0).abs() < 1e-12);
        let rec = integrate(&field, &start.to_vec(0.0), 0.0, 50.0, &Controls::default()).unwrap();
        let last = rec.last().unwrap();
        assert!((last.radial - cc.v0).abs() < 1e-10);
        assert!(rec.energy_drift < 1e-9);
        assert!(rec.samples.iter().all(|s| s.theta == 0.0 && s.arclength == 0.0 && s.s == cc.s0));
        let tail: Vec<Sample> = rec.samples.iter().filter(|s| s.time >= 25.0).cloned().collect();
        let slope = log_radius_slope(&tail).unwrap();
        assert!((slope - cc.v0).abs() < 1e-6 * cc.v0.abs(), "slope {slope}");
        let report = spin_and_arclength(&SpinSeries::from_record(&rec), &SpinOptions::default());
        assert!(report.theta_converged && report.arclength_converged);
        assert_eq!(report.theta_final, 0.0);
        assert_eq!(report.arclength_final, 0.0);
    }

    #[test]
    fn homothetic_field_rejects_non_central_shapes() {
        let sys = MassSystem::equal(3).unwrap();
        let s = vec![Complex64::new(0.3, 0.4)];
        assert!(matches!(
            HomotheticField::new(&sys, -1.0, &s, 1e-8),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn shape_perturbations_of_homothetic_orbit_grow_at_lambda_plus() {
        let sys = MassSystem::equal(3).unwrap();
        let cc = lagrange(&sys);
        let s = vec![cc.s0[0] + Complex64::new(1e-10, 0.0)];
        let start = BlownUpState::on_energy_surface(&sys, -1.0, 0.0, s, vec![Complex64::new(0.0, 0.0)]).unwrap();
        let rec = integrate(&BlownUpField::new(&sys, -1.0), &start.to_vec(0.0), 0.0, 6.0, &Controls::default()).unwrap();
        let pts: Vec<(f64, f64)> = rec
            .samples
            .iter()
            .filter(|p| p.time >= 3.0)
            .map(|p| (p.time, (p.s[0] - cc.s0[0]).norm().ln()))
            .collect();
        let rate = least_squares_slope(&pts).unwrap();
        let plus = cc.lambda_pairs[0].plus.re;
        assert!((rate - plus).abs() < 1e-2 * plus, "rate {rate} vs {plus}");
    }

    #[test]
    fn energy_form_agrees_on_the_energy_surface() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let sys = MassSystem::equal(3).unwrap();
        for _ in 0..20 {
            let s = vec![Complex64::new(rng.random_range(-0.5..0.5), rng.random_range(0.5..1.5))];
            let w = vec![Complex64::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2))];
            let st = BlownUpState::on_energy_surface(&sys, -1.0, rng.random_range(0.0..0.5), s, w).unwrap();
            let y = st.to_vec(0.0);
            let mut a = vec![0.0; y.len()];
            let mut b = vec![0.0; y.len()];
            BlownUpField::new(&sys, -1.0).rhs(0.0, &y, &mut a).unwrap();
            BlownUpField::energy_form(&sys, -1.0).rhs(0.0, &y, &mut b).unwrap();
            assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
        }
    }

    #[test]
    fn capture_stops_the_homothetic_run() {
        let sys = MassSystem::equal(3).unwrap();
        let cc = lagrange(&sys);
        let field = HomotheticField::new(&sys, -1.0, &cc.s0, 1e-10).unwrap();
        let start = field.initial_state(1.0).unwrap();
        let controls = Controls {
            capture_tol: Some(1e-10),
            ..Controls::default()
        };
        let rec = integrate(&field, &start.to_vec(0.0), 0.0, 50.0, &controls).unwrap();
        assert_eq!(rec.termination, Termination::Captured);
        assert!(rec.last().unwrap().time < 50.0);
    }

    #[test]
    fn stable_manifold_orbit_converges_to_the_restpoint() {
        let sys = MassSystem::equal(3).unwrap();
        let cc = lagrange(&sys);
        let rec = stable_manifold_orbit(&sys, &cc, &StableManifoldOptions::default()).unwrap();
        let first = &rec.samples[0];
        let last = rec.last().unwrap();
        assert_eq!(first.time, 0.0);
        assert_eq!(first.theta, 0.0);
        assert_eq!(first.arclength, 0.0);
        assert!(last.r < first.r);
        assert!(rec.samples.windows(2).all(|p| p[1].arclength >= p[0].arclength));
        let report = spin_and_arclength(&SpinSeries::from_record(&rec), &SpinOptions::default());
        assert!(report.theta_converged && report.arclength_converged && !report.diverging);
        assert!(report.bound_holds, "excess {}", report.bound_excess);
        let rate = report.decay_rate.unwrap();
        assert!((rate - cc.slowest_stable_rate()).abs() < 0.1 * cc.slowest_stable_rate(), "rate {rate}");
        assert!(rec.energy_drift < 1e-9);
    }
}
