//! Perturbed gradient flows `x' = -k grad W(x) + gamma(x)` of model
//! potentials, the Lojasiewicz inequality `|grad W|^2 >= C |W|^alpha`, the
//! resulting power-law decay of W and a Cauchy-Schwarz certificate for the
//! finiteness of the arclength.
//!
//! Gradients and norms are taken with respect to a constant Riemannian
//! metric G (identity by default): `grad W = G^-1 dW`, `|v|^2 = v^T G v`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lowdisc::halton;
use crate::ode::{Control, Dop853, OdeSystem};

pub trait Potential: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;

    /// `ln W(x)`, for potentials whose values underflow.
    fn log_value(&self, x: &[f64]) -> f64 {
        self.value(x).ln()
    }

    /// Splits the differential as `dW = exp(a) v`, returning `(a, v)`.
    fn log_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        (0.0, self.gradient(x))
    }

    fn name(&self) -> String;
}

fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// `W = |x|^2`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub dim: usize,
}

impl Potential for Quadratic {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        norm_sq(x)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| 2.0 * v).collect()
    }
    fn name(&self) -> String {
        "quad".into()
    }
}

/// `W = |x|^4`, a degenerate minimum.
#[derive(Debug, Clone)]
pub struct Quartic {
    pub dim: usize,
}

impl Potential for Quartic {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        norm_sq(x).powi(2)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let r2 = norm_sq(x);
        x.iter().map(|v| 4.0 * r2 * v).collect()
    }
    fn name(&self) -> String {
        "quartic".into()
    }
}

/// `W = exp(-1/|x|^2)`: smooth but flat at the origin, so no Lojasiewicz
/// exponent below 2 exists.
#[derive(Debug, Clone)]
pub struct Flat {
    pub dim: usize,
}

impl Potential for Flat {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        let r2 = norm_sq(x);
        if r2 == 0.0 { 0.0 } else { (-1.0 / r2).exp() }
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let (a, v) = self.log_gradient(x);
        let f = a.exp();
        v.iter().map(|c| c * f).collect()
    }
    fn log_value(&self, x: &[f64]) -> f64 {
        -1.0 / norm_sq(x)
    }
    fn log_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let r2 = norm_sq(x);
        (-1.0 / r2, x.iter().map(|v| 2.0 * v / (r2 * r2)).collect())
    }
    fn name(&self) -> String {
        "flat".into()
    }
}

/// One monomial `coeff * prod x_i^powers_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

/// Polynomial potential read from JSON, `{"dim": 2, "terms": [{"coeff": 1.0, "powers": [4, 0]}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    pub dim: usize,
    pub terms: Vec<Monomial>,
}

impl Polynomial {
    pub fn from_json(doc: &str) -> Result<Self> {
        let p: Polynomial = serde_json::from_str(doc)?;
        for t in &p.terms {
            if t.powers.len() != p.dim {
                return Err(Error::Dimension {
                    expected: p.dim,
                    got: t.powers.len(),
                });
            }
        }
        if p.value(&vec![0.0; p.dim]) != 0.0 {
            return Err(Error::Precondition("polynomial potential must vanish at 0".into()));
        }
        Ok(p)
    }
}

impl Potential for Polynomial {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coeff * t.powers.iter().zip(x).map(|(p, v)| v.powi(*p as i32)).product::<f64>())
            .sum()
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        for t in &self.terms {
            for (i, gi) in g.iter_mut().enumerate() {
                if t.powers[i] == 0 {
                    continue;
                }
                let mut term = t.coeff * t.powers[i] as f64;
                for (j, (p, v)) in t.powers.iter().zip(x).enumerate() {
                    let e = if i == j { *p as i32 - 1 } else { *p as i32 };
                    term *= v.powi(e);
                }
                *gi += term;
            }
        }
        g
    }
    fn name(&self) -> String {
        "file".into()
    }
}

/// `kappa * W`.
pub struct Scaled {
    pub inner: Arc<dyn Potential>,
    pub kappa: f64,
}

impl Potential for Scaled {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.kappa * self.inner.value(x)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.inner.gradient(x).into_iter().map(|g| g * self.kappa).collect()
    }
    fn log_value(&self, x: &[f64]) -> f64 {
        self.kappa.ln() + self.inner.log_value(x)
    }
    fn log_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (a, v) = self.inner.log_gradient(x);
        (a + self.kappa.ln(), v)
    }
    fn name(&self) -> String {
        format!("{}*{}", self.kappa, self.inner.name())
    }
}

/// Constant Riemannian metric with cached inverse and square roots.
#[derive(Debug, Clone)]
pub struct Metric {
    g: DMatrix<f64>,
    g_inv: DMatrix<f64>,
    sqrt: DMatrix<f64>,
    sqrt_inv: DMatrix<f64>,
}

impl Metric {
    pub fn identity(dim: usize) -> Self {
        let id = DMatrix::identity(dim, dim);
        Self {
            g: id.clone(),
            g_inv: id.clone(),
            sqrt: id.clone(),
            sqrt_inv: id,
        }
    }

    pub fn constant(g: DMatrix<f64>) -> Result<Self> {
        if g.nrows() != g.ncols() {
            return Err(Error::Dimension {
                expected: g.nrows(),
                got: g.ncols(),
            });
        }
        let eig = g.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::Precondition("metric must be positive definite".into()));
        }
        let v = &eig.eigenvectors;
        let d = |f: &dyn Fn(f64) -> f64| {
            v * DMatrix::from_diagonal(&eig.eigenvalues.map(f)) * v.transpose()
        };
        Ok(Self {
            g_inv: d(&|l| 1.0 / l),
            sqrt: d(&|l| l.sqrt()),
            sqrt_inv: d(&|l| 1.0 / l.sqrt()),
            g,
        })
    }

    pub fn dim(&self) -> usize {
        self.g.nrows()
    }

    pub fn norm(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.g * v)).max(0.0).sqrt()
    }

    /// Metric gradient `G^-1 dW`.
    pub fn raise(&self, dw: &DVector<f64>) -> DVector<f64> {
        &self.g_inv * dw
    }

    /// `|G^-1 dW|^2 = dW^T G^-1 dW`.
    pub fn dual_norm_sq(&self, dw: &DVector<f64>) -> f64 {
        dw.dot(&(&self.g_inv * dw)).max(0.0)
    }
}

/// Perturbation field `gamma`.
#[derive(Debug, Clone, PartialEq)]
pub enum Perturbation {
    None,
    /// `gamma = c G^-1/2 J G^1/2 grad W` with J a quarter turn on coordinate
    /// pairs: metric-orthogonal to `grad W` with `|gamma| = c |grad W|`.
    /// Needs an even dimension.
    Rotation { c: f64 },
}

/// How the Lojasiewicz constant is normalized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Normalization {
    /// Keep `|grad W|^2 >= C W^alpha` with explicit C folded into the bound.
    ExplicitC(f64),
    /// Rescale `W -> kappa W` with `kappa = C^(-1/(2-alpha))` so the constant
    /// becomes 1, and `k -> k/kappa`, `c -> c/kappa` so the flow is unchanged.
    RescaleW(f64),
}

impl Normalization {
    pub fn constant(&self) -> f64 {
        match self {
            Normalization::ExplicitC(c) | Normalization::RescaleW(c) => *c,
        }
    }
}

#[derive(Clone)]
pub struct ModelFlow {
    pub potential: Arc<dyn Potential>,
    pub alpha: f64,
    pub k: f64,
    /// Declared bound `|gamma| <= c |grad W|`.
    pub c: f64,
    pub gamma: Perturbation,
    pub metric: Metric,
    pub normalization: Normalization,
}

impl ModelFlow {
    pub fn new(potential: Arc<dyn Potential>, alpha: f64, k: f64) -> Self {
        let dim = potential.dim();
        Self {
            potential,
            alpha,
            k,
            c: 0.0,
            gamma: Perturbation::None,
            metric: Metric::identity(dim),
            normalization: Normalization::ExplicitC(1.0),
        }
    }

    pub fn with_perturbation(mut self, gamma: Perturbation, c: f64) -> Self {
        self.gamma = gamma;
        self.c = c;
        self
    }

    pub fn with_normalization(mut self, n: Normalization) -> Self {
        self.normalization = n;
        self
    }

    pub fn with_metric(mut self, metric: Metric) -> Self {
        self.metric = metric;
        self
    }

    pub fn dim(&self) -> usize {
        self.potential.dim()
    }

    /// The flow in the form used by the bound: potential, drift constant,
    /// perturbation constant and Lojasiewicz constant.
    pub fn normalized(&self) -> (Arc<dyn Potential>, f64, f64, f64) {
        match self.normalization {
            Normalization::ExplicitC(cc) => (self.potential.clone(), self.k, self.c, cc),
            Normalization::RescaleW(cc) => {
                let kappa = cc.powf(-1.0 / (2.0 - self.alpha));
                let w: Arc<dyn Potential> = Arc::new(Scaled {
                    inner: self.potential.clone(),
                    kappa,
                });
                (w, self.k / kappa, self.c / kappa, 1.0)
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> DVector<f64> {
        self.metric.raise(&DVector::from_vec(self.potential.gradient(x)))
    }

    pub fn perturbation(&self, x: &[f64]) -> DVector<f64> {
        let dim = self.dim();
        match self.gamma {
            Perturbation::None => DVector::zeros(dim),
            Perturbation::Rotation { c } => {
                let g = &self.metric.sqrt * self.gradient(x);
                let mut jg = DVector::zeros(dim);
                for p in 0..dim / 2 {
                    jg[2 * p] = -g[2 * p + 1];
                    jg[2 * p + 1] = g[2 * p];
                }
                &self.metric.sqrt_inv * jg * c
            }
        }
    }

    pub fn velocity(&self, x: &[f64]) -> DVector<f64> {
        self.gradient(x) * (-self.k) + self.perturbation(x)
    }
}

struct FlowSystem<'a>(&'a ModelFlow);

impl OdeSystem for FlowSystem<'_> {
    fn dim(&self) -> usize {
        self.0.dim() + 1
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let n = self.0.dim();
        let v = self.0.velocity(&y[..n]);
        dy[..n].copy_from_slice(v.as_slice());
        dy[n] = self.0.metric.norm(&v);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LojasiewiczCheck {
    pub holds: bool,
    /// min over samples of `|grad W|^2 / (C |W|^alpha)`; may underflow to 0.
    pub worst_ratio: f64,
    /// The same minimum in log form.
    pub worst_log_ratio: f64,
    pub samples: usize,
}

/// Quasi-random cloud in the ball of the given radius: Halton points of the
/// ball plus logarithmically spaced shells down to `radius * 1e-10` so that
/// the behaviour near the critical point is resolved.
pub fn sample_cloud(dim: usize, radius: f64, count: usize) -> Vec<Vec<f64>> {
    let mut pts = crate::lowdisc::ball_points(count, dim, radius, 0);
    let shells = 41;
    let per_shell = (count / shells).max(2 * dim);
    for j in 0..shells {
        let rho = radius * 10f64.powf(-(j as f64) / 4.0);
        for i in 0..per_shell {
            let h = halton((j * per_shell + i + 1) as u64, dim);
            // Box-Muller-free direction: map the cube to the sphere radially.
            let d: Vec<f64> = h.iter().map(|v| 2.0 * v - 1.0).collect();
            let n = norm_sq(&d).sqrt();
            if n > 1e-3 {
                pts.push(d.iter().map(|v| v * rho / n).collect());
            }
        }
    }
    pts.retain(|p| norm_sq(p) > 0.0);
    pts
}

/// `ln(|grad W|^2) - alpha ln W - ln C` at `x`, computed in log form.
pub fn log_ratio(w: &dyn Potential, metric: &Metric, alpha: f64, constant: f64, x: &[f64]) -> f64 {
    let (a, v) = w.log_gradient(x);
    let dual = metric.dual_norm_sq(&DVector::from_vec(v));
    2.0 * a + dual.ln() - alpha * w.log_value(x) - constant.ln()
}

/// Checks `|grad W|^2 >= C |W|^alpha` on the sample cloud.
pub fn check_lojasiewicz(
    w: &dyn Potential,
    metric: &Metric,
    alpha: f64,
    constant: f64,
    cloud: &[Vec<f64>],
) -> LojasiewiczCheck {
    let worst = cloud
        .iter()
        .map(|x| log_ratio(w, metric, alpha, constant, x))
        .fold(f64::INFINITY, f64::min);
    LojasiewiczCheck {
        holds: worst >= -1e-12,
        worst_ratio: worst.exp(),
        worst_log_ratio: worst,
        samples: cloud.len(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    pub tau: Vec<f64>,
    pub w: Vec<f64>,
    pub bound: Vec<f64>,
    /// Cumulative `int |x'|`.
    pub arclength: Vec<f64>,
    pub w0: f64,
    pub alpha: f64,
    /// `k2 = k - c`.
    pub k2: f64,
    /// `k + c`, bounding `|x'| <= (k + c) |grad W|`.
    pub k_plus: f64,
    /// Lojasiewicz constant used in the bound (1 in rescaled mode).
    pub constant: f64,
    pub lambda: f64,
    /// `epsilon` with `1/(alpha-1) = 1 + 2 epsilon`.
    pub epsilon: f64,
    /// max over samples of `W(tau) - bound(tau)`.
    pub violation_max: f64,
    pub monotone: bool,
    pub x_final: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FlowOptions {
    pub rtol: f64,
    pub atol: f64,
    pub samples: usize,
    /// Points of the cloud used for the precondition checks.
    pub cloud: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-12,
            atol: 1e-20,
            samples: 2001,
            cloud: 2000,
        }
    }
}

/// `W0 / (1 + lambda tau)^(1/(alpha-1))` with `lambda = k2 C (alpha-1) W0^(alpha-1)`.
pub fn decay_bound(w0: f64, lambda: f64, alpha: f64, tau: f64) -> f64 {
    w0 / (1.0 + lambda * tau).powf(1.0 / (alpha - 1.0))
}

/// Integrates the model flow from `x0` over `[0, tau_max]` after checking the
/// Lojasiewicz inequality on the ball of radius `|x0|` and the perturbation
/// bound there.
pub fn run_model_flow(flow: &ModelFlow, x0: &[f64], tau_max: f64, opts: &FlowOptions) -> Result<DecayReport> {
    let dim = flow.dim();
    if x0.len() != dim {
        return Err(Error::Dimension {
            expected: dim,
            got: x0.len(),
        });
    }
    if !(flow.alpha > 1.0 && flow.alpha < 2.0) {
        return Err(Error::Precondition(format!("alpha = {} not in (1, 2)", flow.alpha)));
    }
    if !(flow.k > 0.0 && flow.c >= 0.0 && flow.c < flow.k) {
        return Err(Error::Precondition(format!(
            "need 0 <= c < k (c = {}, k = {})",
            flow.c, flow.k
        )));
    }
    if let Perturbation::Rotation { .. } = flow.gamma {
        if dim % 2 != 0 {
            return Err(Error::Precondition("rotation perturbation needs an even dimension".into()));
        }
    }
    let (w, k, c, constant) = flow.normalized();
    let w0 = w.value(x0);
    if !(w0 > 0.0) {
        return Err(Error::Precondition(format!("W(x0) = {w0:e} must be positive")));
    }
    let radius = norm_sq(x0).sqrt();
    let cloud = sample_cloud(dim, radius, opts.cloud);
    let check = check_lojasiewicz(w.as_ref(), &flow.metric, flow.alpha, constant, &cloud);
    if !check.holds {
        return Err(Error::Precondition(format!(
            "x0 outside the region where the inequality holds (worst ratio {:e})",
            check.worst_ratio
        )));
    }
    for x in &cloud {
        let g = flow.metric.norm(&flow.gradient(x));
        let p = flow.metric.norm(&flow.perturbation(x));
        if p > flow.c * g * (1.0 + 1e-12) + 1e-300 {
            return Err(Error::Precondition(format!(
                "|gamma| / |grad W| = {:e} exceeds c = {}",
                p / g,
                flow.c
            )));
        }
    }

    let k2 = k - c;
    let lambda = k2 * constant * (flow.alpha - 1.0) * w0.powf(flow.alpha - 1.0);
    let epsilon = (1.0 / (flow.alpha - 1.0) - 1.0) / 2.0;

    let solver = Dop853::with_tolerances(opts.rtol, opts.atol);
    let count = opts.samples.max(2);
    let grid: Vec<f64> = (0..count).map(|i| tau_max * i as f64 / (count - 1) as f64).collect();
    let mut y0 = x0.to_vec();
    y0.push(0.0);
    let mut tau = vec![0.0];
    let mut xs = vec![y0.clone()];
    let mut next = 1;
    let mut buf = vec![0.0; dim + 1];
    let sys = FlowSystem(flow);
    let out = solver.solve(&sys, 0.0, &y0, tau_max, |step| {
        while next < grid.len() && step.contains(grid[next]) {
            step.interpolate(grid[next], &mut buf);
            tau.push(grid[next]);
            xs.push(buf.clone());
            next += 1;
        }
        Ok(Control::Continue)
    })?;
    if tau.last() != Some(&out.t) {
        tau.push(out.t);
        xs.push(out.y.clone());
    }

    // Report W in the caller's normalization; the rescaled bound is mapped back.
    let scale = w0 / flow.potential.value(x0);
    let wv: Vec<f64> = xs.iter().map(|y| flow.potential.value(&y[..dim])).collect();
    let w0_user = wv[0];
    let bound: Vec<f64> = tau
        .iter()
        .map(|&t| decay_bound(w0, lambda, flow.alpha, t) / scale)
        .collect();
    let violation_max = wv
        .iter()
        .zip(&bound)
        .map(|(a, b)| a - b)
        .fold(f64::NEG_INFINITY, f64::max);
    let monotone = wv.windows(2).all(|p| p[1] <= p[0] + 1e-13 * w0_user);
    Ok(DecayReport {
        arclength: xs.iter().map(|y| y[dim]).collect(),
        x_final: out.y[..dim].to_vec(),
        tau,
        w: wv,
        bound,
        w0: w0_user,
        alpha: flow.alpha,
        k2: k2 * scale,
        k_plus: (k + c) * scale,
        constant: constant / scale.powf(2.0 - flow.alpha),
        lambda,
        epsilon,
        violation_max,
        monotone,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ArclengthCertificate {
    pub finite: bool,
    /// Upper bound on the total arclength `int_0^inf |x'|`.
    pub bound: f64,
    /// Part of the bound beyond the split time.
    pub tail_bound: f64,
    pub split_time: f64,
    /// `int_{split}^inf tau^-(1+eps) = split^-eps / eps`.
    pub decay_factor: f64,
    /// `int_{split}^inf -W' tau^(1+eps)`, bounded through integration by parts.
    pub weighted_dissipation: f64,
    /// Directly accumulated arclength at the end of the run.
    pub measured: f64,
}

/// Bound on `int_{tau_i}^inf |x'|` for the sample index `i` (requires `tau_i >= 1`).
fn tail_from(report: &DecayReport, i: usize) -> (f64, f64, f64) {
    let eps = report.epsilon;
    let ts = report.tau[i];
    let n = report.tau.len();
    let mut integral = 0.0;
    for j in i..n - 1 {
        // W decreasing, tau^eps increasing: upper Riemann sum
        integral += report.w[j] * report.tau[j + 1].powf(eps) * (report.tau[j + 1] - report.tau[j]);
    }
    let t_end = report.tau[n - 1];
    let lam = report.lambda;
    integral += report.w0 * lam.powf(-eps) * (1.0 + lam * t_end).powf(-eps) / (lam * eps);
    let weighted = report.w[i] * ts.powf(1.0 + eps) + (1.0 + eps) * integral;
    let factor = ts.powf(-eps) / eps;
    let tail = report.k_plus * (weighted / report.k2).sqrt() * factor.sqrt();
    (tail, weighted, factor)
}

/// Cauchy-Schwarz certificate that the arclength of the flow is finite:
/// `|x'| <= (k+c) |grad W|` and `|grad W| <= sqrt(-W'/k2)`, split at the first
/// sample `tau_s >= 1`; the head is bounded by `sqrt(tau_s (W0 - W(tau_s))/k2)`
/// and the tail by weighting with `tau^((1+eps)/2) tau^(-(1+eps)/2)`.
pub fn arclength_certificate(report: &DecayReport) -> Result<ArclengthCertificate> {
    if !(report.epsilon > 0.0) {
        return Err(Error::NotCertifiable(format!(
            "epsilon = {} must be positive (alpha < 2)",
            report.epsilon
        )));
    }
    let i = report
        .tau
        .iter()
        .position(|&t| t >= 1.0)
        .ok_or_else(|| Error::NotCertifiable("run must extend to tau >= 1".into()))?;
    let ts = report.tau[i];
    let head = report.k_plus * (ts * (report.w0 - report.w[i]).max(0.0) / report.k2).sqrt();
    let (tail, weighted, factor) = tail_from(report, i);
    let bound = head + tail;
    Ok(ArclengthCertificate {
        finite: bound.is_finite(),
        bound,
        tail_bound: tail,
        split_time: ts,
        decay_factor: factor,
        weighted_dissipation: weighted,
        measured: *report.arclength.last().unwrap_or(&0.0),
    })
}

/// Earliest sample time beyond which the certified remaining arclength is
/// below `tol`.
pub fn cauchy_time(report: &DecayReport, tol: f64) -> Option<f64> {
    if !(report.epsilon > 0.0) {
        return None;
    }
    (0..report.tau.len())
        .filter(|&i| report.tau[i] >= 1.0)
        .find(|&i| tail_from(report, i).0 < tol)
        .map(|i| report.tau[i])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quartic_flow() -> ModelFlow {
        ModelFlow::new(Arc::new(Quartic { dim: 2 }), 1.5, 1.0).with_normalization(Normalization::ExplicitC(16.0))
    }

    #[test]
    fn potentials_match_finite_differences() {
        let pots: Vec<Arc<dyn Potential>> = vec![
            Arc::new(Quadratic { dim: 3 }),
            Arc::new(Quartic { dim: 3 }),
            Arc::new(Flat { dim: 3 }),
            Arc::new(Polynomial {
                dim: 3,
                terms: vec![
                    Monomial { coeff: 1.5, powers: vec![2, 1, 0] },
                    Monomial { coeff: -0.5, powers: vec![0, 0, 3] },
                ],
            }),
        ];
        let x = [0.4, -0.3, 0.7];
        for p in pots {
            let g = p.gradient(&x);
            for i in 0..3 {
                let h = 1e-6;
                let mut a = x;
                let mut b = x;
                a[i] += h;
                b[i] -= h;
                let fd = (p.value(&a) - p.value(&b)) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-7, "{} component {i}", p.name());
            }
            assert!((p.log_value(&x) - p.value(&x).ln()).abs() < 1e-12 || p.value(&x) <= 0.0);
        }
    }

    #[test]
    fn polynomial_json_round_trip_and_validation() {
        let p = Polynomial::from_json(r#"{"dim": 2, "terms": [{"coeff": 1.0, "powers": [4, 0]}, {"coeff": 1.0, "powers": [0, 4]}]}"#).unwrap();
        assert_eq!(p.value(&[1.0, 2.0]), 17.0);
        assert!(Polynomial::from_json(r#"{"dim": 1, "terms": [{"coeff": 1.0, "powers": [0]}]}"#).is_err());
        assert!(Polynomial::from_json(r#"{"dim": 2, "terms": [{"coeff": 1.0, "powers": [1]}]}"#).is_err());
    }

    #[test]
    fn lojasiewicz_examples() {
        let id = Metric::identity(2);
        let cloud = sample_cloud(2, 1.0, 1000);
        let q = check_lojasiewicz(&Quadratic { dim: 2 }, &id, 1.5, 1.0, &cloud);
        assert!(q.holds && q.worst_ratio >= 4.0 - 1e-9);
        let quartic = check_lojasiewicz(&Quartic { dim: 2 }, &id, 1.5, 16.0, &cloud);
        assert!(quartic.holds);
        let scaled = Scaled {
            inner: Arc::new(Quartic { dim: 2 }),
            kappa: 16f64.powf(-1.0 / 0.5),
        };
        assert!(check_lojasiewicz(&scaled, &id, 1.5, 1.0, &cloud).holds);
        // a quartic is fine near 0 even for exponents up to 2
        let small = sample_cloud(2, 0.1, 1000);
        assert!(check_lojasiewicz(&Quartic { dim: 2 }, &id, 1.99, 1.0, &small).holds);
        for j in 1..20 {
            let alpha = 1.0 + j as f64 / 20.0;
            let flat = check_lojasiewicz(&Flat { dim: 2 }, &id, alpha, 1.0, &cloud);
            assert!(!flat.holds, "alpha = {alpha}");
        }
    }

    #[test]
    fn quadratic_flow_decays_exponentially() {
        let flow = ModelFlow::new(Arc::new(Quadratic { dim: 2 }), 1.5, 1.0);
        let rep = run_model_flow(&flow, &[0.1, 0.0], 5.0, &FlowOptions::default()).unwrap();
        for (t, w) in rep.tau.iter().zip(&rep.w) {
            assert!((w - 0.01 * (-4.0 * t).exp()).abs() < 1e-14);
        }
        assert!(rep.violation_max <= 0.0);
        assert!(rep.w[1..].iter().zip(&rep.bound[1..]).all(|(w, b)| w < b));
        assert!(rep.monotone);
        let cert = arclength_certificate(&rep).unwrap();
        assert!(cert.bound >= 0.1);
        assert!((rep.arclength.last().unwrap() - 0.1 * (1.0 - (-10.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn quartic_flow_matches_closed_form_and_bound() {
        let flow = quartic_flow();
        let rep = run_model_flow(&flow, &[0.1, 0.0], 100.0, &FlowOptions::default()).unwrap();
        let w0: f64 = 1e-4;
        for (t, w) in rep.tau.iter().zip(&rep.w) {
            let exact = w0 / (1.0 + 8.0 * w0.sqrt() * t).powi(2);
            assert!((w - exact).abs() < 1e-8 * w0);
        }
        assert!((rep.lambda - 8.0 * w0.sqrt()).abs() < 1e-15);
        assert!(rep.violation_max <= 1e-9);
        let cert = arclength_certificate(&rep).unwrap();
        assert!(cert.finite && cert.bound >= cert.measured);
        // exact arclength is |x0| - |x(T)|
        let r_end = 0.1 / (1.0 + 8.0 * 0.01 * 100.0f64).sqrt();
        assert!((cert.measured - (0.1 - r_end)).abs() < 1e-10);
    }

    #[test]
    fn rescaled_normalization_gives_the_same_bound() {
        let a = run_model_flow(&quartic_flow(), &[0.1, 0.0], 10.0, &FlowOptions::default()).unwrap();
        let flow = quartic_flow().with_normalization(Normalization::RescaleW(16.0));
        let b = run_model_flow(&flow, &[0.1, 0.0], 10.0, &FlowOptions::default()).unwrap();
        assert!((a.lambda - b.lambda).abs() < 1e-14);
        for (x, y) in a.bound.iter().zip(&b.bound) {
            assert!((x - y).abs() < 1e-15);
        }
        for (x, y) in a.w.iter().zip(&b.w) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn orthogonal_perturbation_keeps_decay() {
        let flow = quartic_flow().with_perturbation(Perturbation::Rotation { c: 0.3 }, 0.3);
        let rep = run_model_flow(&flow, &[0.1, 0.0], 50.0, &FlowOptions::default()).unwrap();
        assert!(rep.monotone);
        assert!((rep.k2 - 0.7).abs() < 1e-15);
        assert!(rep.violation_max <= 1e-9);
        let plain = run_model_flow(&quartic_flow(), &[0.1, 0.0], 50.0, &FlowOptions::default()).unwrap();
        for (x, y) in rep.w.iter().zip(&plain.w) {
            assert!((x - y).abs() < 1e-12 * 1e-4);
        }
        let cert = arclength_certificate(&rep).unwrap();
        assert!(cert.bound >= cert.measured);
    }

    #[test]
    fn perturbation_contract_is_enforced() {
        let flow = quartic_flow().with_perturbation(Perturbation::Rotation { c: 0.3 }, 0.2);
        assert!(matches!(
            run_model_flow(&flow, &[0.1, 0.0], 1.0, &FlowOptions::default()),
            Err(Error::Precondition(_))
        ));
        let flow = quartic_flow().with_perturbation(Perturbation::Rotation { c: 1.2 }, 1.2);
        assert!(run_model_flow(&flow, &[0.1, 0.0], 1.0, &FlowOptions::default()).is_err());
    }

    #[test]
    fn flat_potential_is_rejected() {
        let flow = ModelFlow::new(Arc::new(Flat { dim: 2 }), 1.5, 1.0);
        assert!(matches!(
            run_model_flow(&flow, &[0.5, 0.0], 1.0, &FlowOptions::default()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn certificate_near_alpha_two() {
        // alpha = 2/(1+2 eps) + ... chosen so that eps = 0.01
        let eps: f64 = 0.01;
        let alpha = 1.0 + 1.0 / (1.0 + 2.0 * eps);
        let flow = ModelFlow::new(Arc::new(Quadratic { dim: 2 }), alpha, 1.0);
        let rep = run_model_flow(&flow, &[0.1, 0.0], 5.0, &FlowOptions::default()).unwrap();
        assert!((rep.epsilon - eps).abs() < 1e-12);
        let cert = arclength_certificate(&rep).unwrap();
        assert!((cert.decay_factor - cert.split_time.powf(-eps) / eps).abs() < 1e-9);
        assert!(cert.decay_factor > 50.0 && cert.finite);
        assert!(cert.bound >= cert.measured);
        let too_big = DecayReport { epsilon: 0.0, ..rep };
        assert!(matches!(arclength_certificate(&too_big), Err(Error::NotCertifiable(_))));
    }

    #[test]
    fn cauchy_time_bounds_increments() {
        let rep = run_model_flow(&quartic_flow(), &[0.1, 0.0], 1000.0, &FlowOptions::default()).unwrap();
        let tol = 0.05;
        let t_star = cauchy_time(&rep, tol).unwrap();
        let i = rep.tau.iter().position(|&t| t == t_star).unwrap();
        let inc = rep.arclength.last().unwrap() - rep.arclength[i];
        assert!(inc < tol);
    }

    #[test]
    fn metric_gradient_flow() {
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let metric = Metric::constant(g).unwrap();
        let flow = quartic_flow()
            .with_metric(metric.clone())
            .with_perturbation(Perturbation::Rotation { c: 0.3 }, 0.3);
        let x = [0.05, -0.02];
        let gr = flow.gradient(&x);
        let p = flow.perturbation(&x);
        // metric-orthogonal and of relative size c
        assert!(((&metric.g * &gr).dot(&p)).abs() < 1e-18);
        assert!((metric.norm(&p) - 0.3 * metric.norm(&gr)).abs() < 1e-15);
    }
}
