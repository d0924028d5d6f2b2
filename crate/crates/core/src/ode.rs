//! Dormand-Prince 8(5,3) explicit Runge-Kutta integrator with seventh order
//! dense output and Lund (PI) step size stabilization.
//!
//! References: E. Hairer, S. P. Norsett, G. Wanner, Solving Ordinary
//! Differential Equations I, 2nd ed., Springer (1993), section II.10 and the
//! accompanying `dop853.f`.

use crate::error::{Error, Result};

pub trait OdeSystem {
    fn dim(&self) -> usize;

    /// Evaluates `dy = f(t, y)`. A domain error makes the integrator reject
    /// the trial step and retry with a smaller step.
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()>;
}

/// Runs a system backwards in its independent variable.
pub struct Reversed<'a, S: ?Sized>(pub &'a S);

impl<S: OdeSystem + ?Sized> OdeSystem for Reversed<'_, S> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        self.0.rhs(-t, y, dy)?;
        dy.iter_mut().for_each(|d| *d = -*d);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Stats {
    pub evals: usize,
    pub accepted: usize,
    pub rejected: usize,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub t: f64,
    pub y: Vec<f64>,
    pub stats: Stats,
    /// True when the observer requested an early stop.
    pub stopped: bool,
}

/// An accepted step together with its dense output polynomial.
pub struct DenseStep<'a> {
    pub t_old: f64,
    pub t: f64,
    pub y_old: &'a [f64],
    pub y: &'a [f64],
    cont: &'a [Vec<f64>; 8],
}

impl DenseStep<'_> {
    pub fn h(&self) -> f64 {
        self.t - self.t_old
    }

    /// Evaluates the dense output at `t`, which should lie in the step.
    pub fn interpolate(&self, t: f64, out: &mut [f64]) {
        let s = (t - self.t_old) / self.h();
        let s1 = 1.0 - s;
        let c = self.cont;
        for i in 0..out.len() {
            let conpar = c[4][i] + s * (c[5][i] + s1 * (c[6][i] + s * c[7][i]));
            out[i] = c[0][i] + s * (c[1][i] + s1 * (c[2][i] + s * (c[3][i] + s1 * conpar)));
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.y.len()];
        self.interpolate(t, &mut out);
        out
    }

    /// True when `t` lies in the closed step interval (either direction).
    pub fn contains(&self, t: f64) -> bool {
        let (lo, hi) = if self.t >= self.t_old {
            (self.t_old, self.t)
        } else {
            (self.t, self.t_old)
        };
        t >= lo && t <= hi
    }
}

#[derive(Debug, Clone)]
pub struct Dop853 {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: Option<f64>,
    pub h_max: Option<f64>,
    pub max_steps: usize,
    pub safety: f64,
    /// Step ratio bounds: `fac1 <= h_new / h <= fac2`.
    pub fac1: f64,
    pub fac2: f64,
    /// Lund stabilization exponent (0 gives pure I control).
    pub beta: f64,
}

impl Default for Dop853 {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            h_init: None,
            h_max: None,
            max_steps: 2_000_000,
            safety: 0.9,
            fac1: 0.333,
            fac2: 6.0,
            beta: 0.04,
        }
    }
}

impl Dop853 {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }

    fn scale(&self, a: f64, b: f64) -> f64 {
        self.atol + self.rtol * a.abs().max(b.abs())
    }

    fn initial_step<S: OdeSystem + ?Sized>(
        &self,
        sys: &S,
        t0: f64,
        y0: &[f64],
        f0: &[f64],
        dir: f64,
        h_max: f64,
        stats: &mut Stats,
    ) -> Result<f64> {
        let n = y0.len();
        let mut dnf = 0.0;
        let mut dny = 0.0;
        for i in 0..n {
            let sk = self.scale(y0[i], 0.0);
            dnf += (f0[i] / sk).powi(2);
            dny += (y0[i] / sk).powi(2);
        }
        let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
            1e-6
        } else {
            (dny / dnf).sqrt() * 0.01
        };
        h = h.min(h_max);
        let y1: Vec<f64> = (0..n).map(|i| y0[i] + dir * h * f0[i]).collect();
        let mut f1 = vec![0.0; n];
        stats.evals += 1;
        if sys.rhs(t0 + dir * h, &y1, &mut f1).is_err() {
            return Ok(h * 1e-3);
        }
        let der2 = (0..n)
            .map(|i| ((f1[i] - f0[i]) / self.scale(y0[i], 0.0)).powi(2))
            .sum::<f64>()
            .sqrt()
            / h;
        let der12 = der2.abs().max(dnf.sqrt());
        let h1 = if der12 <= 1e-15 {
            (h * 1e-3).max(1e-6)
        } else {
            (0.01 / der12).powf(1.0 / 8.0)
        };
        Ok((100.0 * h).min(h1).min(h_max))
    }

    /// Integrates from `t0` to `t_end` (either direction), calling `observer`
    /// after every accepted step.
    pub fn solve<S, F>(&self, sys: &S, t0: f64, y0: &[f64], t_end: f64, mut observer: F) -> Result<Outcome>
    where
        S: OdeSystem + ?Sized,
        F: FnMut(&DenseStep) -> Result<Control>,
    {
        let n = sys.dim();
        if y0.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: y0.len(),
            });
        }
        let mut stats = Stats::default();
        let mut t = t0;
        let mut y = y0.to_vec();
        if t_end == t0 {
            return Ok(Outcome {
                t,
                y,
                stats,
                stopped: false,
            });
        }
        let dir = (t_end - t0).signum();
        let h_max = self.h_max.unwrap_or((t_end - t0).abs());

        let mut f = vec![0.0; n];
        stats.evals += 1;
        sys.rhs(t, &y, &mut f)?;
        if f.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t });
        }

        let mut h = match self.h_init {
            Some(h) => h.abs().min(h_max),
            None => self.initial_step(sys, t, &y, &f, dir, h_max, &mut stats)?,
        };

        let expo1 = 1.0 / 8.0 - self.beta * 0.2;
        let facc1 = 1.0 / self.fac1;
        let facc2 = 1.0 / self.fac2;
        let mut facold: f64 = 1e-4;
        let mut reject = false;
        let mut last_domain_error: Option<Error> = None;

        let mut k: [Vec<f64>; 17] = std::array::from_fn(|_| vec![0.0; n]);
        let mut tmp = vec![0.0; n];
        let mut y_new = vec![0.0; n];
        let mut f_new = vec![0.0; n];
        let mut cont: [Vec<f64>; 8] = std::array::from_fn(|_| vec![0.0; n]);

        let mut steps = 0usize;
        loop {
            if steps >= self.max_steps {
                return Err(Error::MaxSteps(self.max_steps));
            }
            let mut last = false;
            if (t + 1.01 * dir * h - t_end) * dir >= 0.0 {
                h = (t_end - t).abs();
                last = true;
            }
            if 0.1 * h <= t.abs() * f64::EPSILON || h == 0.0 {
                return Err(last_domain_error.unwrap_or(Error::StepSizeUnderflow { t }));
            }
            steps += 1;
            let hs = dir * h;

            match self.attempt(sys, t, &y, &f, hs, &mut k, &mut tmp, &mut y_new, &mut stats) {
                Ok(err) if err.is_finite() => {
                    let fac11 = err.powf(expo1);
                    let fac = (fac11 / facold.powf(self.beta) / self.safety).clamp(facc2, facc1);
                    let mut h_new = h / fac;
                    if err <= 1.0 {
                        stats.evals += 1;
                        if let Err(e) = sys.rhs(t + hs, &y_new, &mut f_new) {
                            last_domain_error = Some(e);
                            h *= 0.25;
                            reject = true;
                            stats.rejected += 1;
                            continue;
                        }
                        facold = err.max(1e-4);
                        stats.accepted += 1;
                        self.dense(sys, t, &y, &y_new, &f_new, hs, &mut k, &mut tmp, &mut cont, &mut stats)?;

                        let t_new = t + hs;
                        let control = {
                            let step = DenseStep {
                                t_old: t,
                                t: if last { t_end } else { t_new },
                                y_old: &y,
                                y: &y_new,
                                cont: &cont,
                            };
                            observer(&step)?
                        };
                        std::mem::swap(&mut y, &mut y_new);
                        std::mem::swap(&mut f, &mut f_new);
                        t = if last { t_end } else { t_new };
                        if control == Control::Stop {
                            return Ok(Outcome {
                                t,
                                y,
                                stats,
                                stopped: true,
                            });
                        }
                        if last {
                            return Ok(Outcome {
                                t,
                                y,
                                stats,
                                stopped: false,
                            });
                        }
                        if reject {
                            h_new = h_new.min(h);
                        }
                        reject = false;
                        h = h_new.min(h_max);
                    } else {
                        h /= facc1.min(fac11 / self.safety);
                        reject = true;
                        stats.rejected += 1;
                    }
                }
                Ok(_) => {
                    h *= 0.25;
                    reject = true;
                    stats.rejected += 1;
                }
                Err(e) => {
                    last_domain_error = Some(e);
                    h *= 0.25;
                    reject = true;
                    stats.rejected += 1;
                }
            }
        }
    }

    /// One trial step; fills `y_new` and returns the scaled error norm.
    #[allow(clippy::too_many_arguments)]
    fn attempt<S: OdeSystem + ?Sized>(
        &self,
        sys: &S,
        t: f64,
        y: &[f64],
        f: &[f64],
        h: f64,
        k: &mut [Vec<f64>; 17],
        tmp: &mut [f64],
        y_new: &mut [f64],
        stats: &mut Stats,
    ) -> Result<f64> {
        let n = y.len();
        k[1].copy_from_slice(f);
        // k[j] holds stage j (1-based, stages 1..=12)
        for (stage, (c, row)) in STAGES.iter().enumerate() {
            let j = stage + 2;
            for i in 0..n {
                let mut acc = 0.0;
                for &(idx, a) in row.iter() {
                    acc += a * k[idx][i];
                }
                tmp[i] = y[i] + h * acc;
            }
            stats.evals += 1;
            let (_, tail) = k.split_at_mut(j);
            sys.rhs(t + c * h, tmp, &mut tail[0])?;
        }
        let mut err = 0.0;
        let mut err2 = 0.0;
        for i in 0..n {
            let bsum = B.iter().map(|&(idx, b)| b * k[idx][i]).sum::<f64>();
            y_new[i] = y[i] + h * bsum;
            let sk = self.scale(y[i], y_new[i]);
            let e2 = bsum - BHH1 * k[1][i] - BHH2 * k[9][i] - BHH3 * k[12][i];
            err2 += (e2 / sk).powi(2);
            let e1 = ER.iter().map(|&(idx, e)| e * k[idx][i]).sum::<f64>();
            err += (e1 / sk).powi(2);
        }
        if y_new.iter().any(|v| !v.is_finite()) {
            return Ok(f64::NAN);
        }
        let mut deno = err + 0.01 * err2;
        if deno <= 0.0 {
            deno = 1.0;
        }
        Ok(h.abs() * err * (1.0 / (deno * n as f64)).sqrt())
    }

    #[allow(clippy::too_many_arguments)]
    fn dense<S: OdeSystem + ?Sized>(
        &self,
        sys: &S,
        t: f64,
        y: &[f64],
        y_new: &[f64],
        f_new: &[f64],
        h: f64,
        k: &mut [Vec<f64>; 17],
        tmp: &mut [f64],
        cont: &mut [Vec<f64>; 8],
        stats: &mut Stats,
    ) -> Result<()> {
        let n = y.len();
        k[13].copy_from_slice(f_new);
        for i in 0..n {
            let ydiff = y_new[i] - y[i];
            let bspl = h * k[1][i] - ydiff;
            cont[0][i] = y[i];
            cont[1][i] = ydiff;
            cont[2][i] = bspl;
            cont[3][i] = ydiff - h * f_new[i] - bspl;
        }
        for (stage, (c, row)) in DENSE_STAGES.iter().enumerate() {
            let j = stage + 14;
            for i in 0..n {
                let acc: f64 = row.iter().map(|&(idx, a)| a * k[idx][i]).sum();
                tmp[i] = y[i] + h * acc;
            }
            stats.evals += 1;
            let (_, tail) = k.split_at_mut(j);
            sys.rhs(t + c * h, tmp, &mut tail[0])?;
        }
        for (slot, row) in D.iter().enumerate() {
            for i in 0..n {
                let acc: f64 = row.iter().map(|&(idx, d)| d * k[idx][i]).sum();
                cont[4 + slot][i] = h * acc;
            }
        }
        Ok(())
    }
}

// Stage table: (c_j, [(stage index, a_jl)]) for stages 2..=12. Index 13 is
// the derivative at the new point, 14..=15 are the extra dense output stages.
type Row = &'static [(usize, f64)];

const STAGES: [(f64, Row); 11] = [
    (0.526001519587677318785587544488e-01, &[(1, 5.26001519587677318785587544488e-2)]),
    (
        0.789002279381515978178381316732e-01,
        &[(1, 1.97250569845378994544595329183e-2), (2, 5.91751709536136983633785987549e-2)],
    ),
    (
        0.118350341907227396726757197510e+00,
        &[(1, 2.95875854768068491816892993775e-2), (3, 8.87627564304205475450678981324e-2)],
    ),
    (
        0.281649658092772603273242802490e+00,
        &[
            (1, 2.41365134159266685502369798665e-1),
            (3, -8.84549479328286085344864962717e-1),
            (4, 9.24834003261792003115737966543e-1),
        ],
    ),
    (
        0.333333333333333333333333333333e+00,
        &[
            (1, 3.7037037037037037037037037037e-2),
            (4, 1.70828608729473871279604482173e-1),
            (5, 1.25467687566822425016691814123e-1),
        ],
    ),
    (
        0.25e+00,
        &[
            (1, 3.7109375e-2),
            (4, 1.70252211019544039314978060272e-1),
            (5, 6.02165389804559606850219397283e-2),
            (6, -1.7578125e-2),
        ],
    ),
    (
        0.307692307692307692307692307692e+00,
        &[
            (1, 3.70920001185047927108779319836e-2),
            (4, 1.70383925712239993810214054705e-1),
            (5, 1.07262030446373284651809199168e-1),
            (6, -1.53194377486244017527936158236e-2),
            (7, 8.27378916381402288758473766002e-3),
        ],
    ),
    (
        0.651282051282051282051282051282e+00,
        &[
            (1, 6.24110958716075717114429577812e-1),
            (4, -3.36089262944694129406857109825e0),
            (5, -8.68219346841726006818189891453e-1),
            (6, 2.75920996994467083049415600797e1),
            (7, 2.01540675504778934086186788979e1),
            (8, -4.34898841810699588477366255144e1),
        ],
    ),
    (
        0.6e+00,
        &[
            (1, 4.77662536438264365890433908527e-1),
            (4, -2.48811461997166764192642586468e0),
            (5, -5.90290826836842996371446475743e-1),
            (6, 2.12300514481811942347288949897e1),
            (7, 1.52792336328824235832596922938e1),
            (8, -3.32882109689848629194453265587e1),
            (9, -2.03312017085086261358222928593e-2),
        ],
    ),
    (
        0.857142857142857142857142857142e+00,
        &[
            (1, -9.3714243008598732571704021658e-1),
            (4, 5.18637242884406370830023853209e0),
            (5, 1.09143734899672957818500254654e0),
            (6, -8.14978701074692612513997267357e0),
            (7, -1.85200656599969598641566180701e1),
            (8, 2.27394870993505042818970056734e1),
            (9, 2.49360555267965238987089396762e0),
            (10, -3.0467644718982195003823669022e0),
        ],
    ),
    (
        1.0,
        &[
            (1, 2.27331014751653820792359768449e0),
            (4, -1.05344954667372501984066689879e1),
            (5, -2.00087205822486249909675718444e0),
            (6, -1.79589318631187989172765950534e1),
            (7, 2.79488845294199600508499808837e1),
            (8, -2.85899827713502369474065508674e0),
            (9, -8.87285693353062954433549289258e0),
            (10, 1.23605671757943030647266201528e1),
            (11, 6.43392746015763530355970484046e-1),
        ],
    ),
];

const B: [(usize, f64); 8] = [
    (1, 5.42937341165687622380535766363e-2),
    (6, 4.45031289275240888144113950566e0),
    (7, 1.89151789931450038304281599044e0),
    (8, -5.8012039600105847814672114227e0),
    (9, 3.1116436695781989440891606237e-1),
    (10, -1.52160949662516078556178806805e-1),
    (11, 2.01365400804030348374776537501e-1),
    (12, 4.47106157277725905176885569043e-2),
];

const BHH1: f64 = 0.244094488188976377952755905512e+00;
const BHH2: f64 = 0.733846688281611857341361741547e+00;
const BHH3: f64 = 0.220588235294117647058823529412e-01;

const ER: [(usize, f64); 8] = [
    (1, 0.1312004499419488073250102996e-01),
    (6, -0.1225156446376204440720569753e+01),
    (7, -0.4957589496572501915214079952e+00),
    (8, 0.1664377182454986536961530415e+01),
    (9, -0.3503288487499736816886487290e+00),
    (10, 0.3341791187130174790297318841e+00),
    (11, 0.8192320648511571246570742613e-01),
    (12, -0.2235530786388629525884427845e-01),
];

const DENSE_STAGES: [(f64, Row); 3] = [
    (
        0.1e+00,
        &[
            (1, 5.61675022830479523392909219681e-2),
            (7, 2.53500210216624811088794765333e-1),
            (8, -2.46239037470802489917441475441e-1),
            (9, -1.24191423263816360469010140626e-1),
            (10, 1.5329179827876569731206322685e-1),
            (11, 8.20105229563468988491666602057e-3),
            (12, 7.56789766054569976138603589584e-3),
            (13, -8.298e-3),
        ],
    ),
    (
        0.2e+00,
        &[
            (1, 3.18346481635021405060768473261e-2),
            (6, 2.83009096723667755288322961402e-2),
            (7, 5.35419883074385676223797384372e-2),
            (8, -5.49237485713909884646569340306e-2),
            (11, -1.08347328697249322858509316994e-4),
            (12, 3.82571090835658412954920192323e-4),
            (13, -3.40465008687404560802977114492e-4),
            (14, 1.41312443674632500278074618366e-1),
        ],
    ),
    (
        0.777777777777777777777777777778e+00,
        &[
            (1, -4.28896301583791923408573538692e-1),
            (6, -4.69762141536116384314449447206e0),
            (7, 7.68342119606259904184240953878e0),
            (8, 4.06898981839711007970213554331e0),
            (9, 3.56727187455281109270669543021e-1),
            (13, -1.39902416515901462129418009734e-3),
            (14, 2.9475147891527723389556272149e0),
            (15, -9.15095847217987001081870187138e0),
        ],
    ),
];

const D: [Row; 4] = [
    &[
        (1, -0.84289382761090128651353491142e+01),
        (6, 0.56671495351937776962531783590e+00),
        (7, -0.30689499459498916912797304727e+01),
        (8, 0.23846676565120698287728149680e+01),
        (9, 0.21170345824450282767155149946e+01),
        (10, -0.87139158377797299206789907490e+00),
        (11, 0.22404374302607882758541771650e+01),
        (12, 0.63157877876946881815570249290e+00),
        (13, -0.88990336451333310820698117400e-01),
        (14, 0.18148505520854727256656404962e+02),
        (15, -0.91946323924783554000451984436e+01),
        (16, -0.44360363875948939664310572000e+01),
    ],
    &[
        (1, 0.10427508642579134603413151009e+02),
        (6, 0.24228349177525818288430175319e+03),
        (7, 0.16520045171727028198505394887e+03),
        (8, -0.37454675472269020279518312152e+03),
        (9, -0.22113666853125306036270938578e+02),
        (10, 0.77334326684722638389603898808e+01),
        (11, -0.30674084731089398182061213626e+02),
        (12, -0.93321305264302278729567221706e+01),
        (13, 0.15697238121770843886131091075e+02),
        (14, -0.31139403219565177677282850411e+02),
        (15, -0.93529243588444783865713862664e+01),
        (16, 0.35816841486394083752465898540e+02),
    ],
    &[
        (1, 0.19985053242002433820987653617e+02),
        (6, -0.38703730874935176555105901742e+03),
        (7, -0.18917813819516756882830838328e+03),
        (8, 0.52780815920542364900561016686e+03),
        (9, -0.11573902539959630126141871134e+02),
        (10, 0.68812326946963000169666922661e+01),
        (11, -0.10006050966910838403183860980e+01),
        (12, 0.77771377980534432092869265740e+00),
        (13, -0.27782057523535084065932004339e+01),
        (14, -0.60196695231264120758267380846e+02),
        (15, 0.84320405506677161018159903784e+02),
        (16, 0.11992291136182789328035130030e+02),
    ],
    &[
        (1, -0.25693933462703749003312586129e+02),
        (6, -0.15418974869023643374053993627e+03),
        (7, -0.23152937917604549567536039109e+03),
        (8, 0.35763911791061412378285349910e+03),
        (9, 0.93405324183624310003907691704e+02),
        (10, -0.37458323136451633156875139351e+02),
        (11, 0.10409964950896230045147246184e+03),
        (12, 0.29840293426660503123344363579e+02),
        (13, -0.43533456590011143754432175058e+02),
        (14, 0.96324553959188282948394950600e+02),
        (15, -0.39177261675615439165231486172e+02),
        (16, -0.14972683625798562581422125276e+03),
    ],
];
