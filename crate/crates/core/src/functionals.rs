//! Conservation laws, localized functionals and Lyapunov combinations.
//!
//! The three conserved quantities are
//! `M = 1/2 int u^2`,
//! `E = 1/2 int u_x^2 - 1/4 int u^4` and
//! `F = 1/2 int u_xx^2 - 5/2 int u^2 u_x^2 + 1/4 int u^6`.
//! Their localized versions weight the densities by `Phi_j = Psi(x - m_j(t))`,
//! a smooth step sitting between objects `j-1` and `j`.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{LabError, Result};
use crate::exact::{eval_object, eval_sum, Configuration};
use crate::grid::{derivatives, dot, Field, Grid};

/// `(M, E, F)`-shaped triple of numbers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Triple {
    pub mass: f64,
    pub energy: f64,
    pub f_second: f64,
}

impl Triple {
    pub fn new(mass: f64, energy: f64, f_second: f64) -> Self {
        Self { mass, energy, f_second }
    }

    fn sum(self, other: Triple) -> Triple {
        Triple::new(self.mass + other.mass, self.energy + other.energy, self.f_second + other.f_second)
    }

    fn diff(self, other: Triple) -> Triple {
        Triple::new(self.mass - other.mass, self.energy - other.energy, self.f_second - other.f_second)
    }

    pub fn max_abs(&self) -> f64 {
        self.mass.abs().max(self.energy.abs()).max(self.f_second.abs())
    }
}

/// `F + 2 (b^2 - a^2) E + (a^2 + b^2)^2 M`.
pub fn lyapunov_combination(t: Triple, a: f64, b: f64) -> f64 {
    t.f_second + 2.0 * (b * b - a * a) * t.energy + (a * a + b * b).powi(2) * t.mass
}

fn weighted_triple(grid: &Grid, d: &[Vec<f64>], weight: &[f64]) -> Triple {
    let (mut m, mut e, mut f) = (0.0, 0.0, 0.0);
    for i in 0..grid.points() {
        let (u, ux, uxx) = (d[0][i], d[1][i], d[2][i]);
        let u2 = u * u;
        let w = weight[i];
        m += 0.5 * u2 * w;
        e += (0.5 * ux * ux - 0.25 * u2 * u2) * w;
        f += (0.5 * uxx * uxx - 2.5 * u2 * ux * ux + 0.25 * u2 * u2 * u2) * w;
    }
    let dx = grid.spacing();
    Triple::new(m * dx, e * dx, f * dx)
}

/// Global `(M, E, F)`.
pub fn conserved(u: &Field) -> Result<Triple> {
    let d = derivatives(u, 2)?;
    Ok(weighted_triple(u.grid(), &d, &vec![1.0; u.grid().points()]))
}

pub fn mass(u: &Field) -> Result<f64> {
    Ok(conserved(u)?.mass)
}

pub fn energy(u: &Field) -> Result<f64> {
    Ok(conserved(u)?.energy)
}

pub fn f_second(u: &Field) -> Result<f64> {
    Ok(conserved(u)?.f_second)
}

/// Cutoff `Psi(x) = (2/pi) arctan(exp(sqrt(sigma) x / 2))` and its first
/// three derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsiJet {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

pub fn psi_jet(x: f64, sigma: f64) -> PsiJet {
    let s = 0.5 * sigma.sqrt();
    let z = s * x;
    // Evaluate the small side directly so neither tail loses precision.
    let value = if z < 0.0 {
        z.exp().atan() * 2.0 / PI
    } else {
        1.0 - (-z).exp().atan() * 2.0 / PI
    };
    let sech = 1.0 / z.cosh();
    let th = z.tanh();
    let amp = sigma.sqrt() / (2.0 * PI);
    PsiJet {
        value,
        d1: amp * sech,
        d2: -amp * s * sech * th,
        d3: -amp * s * s * sech * (sech * sech - th * th),
    }
}

pub fn cutoff_psi(x: f64, sigma: f64) -> f64 {
    psi_jet(x, sigma).value
}

/// A midpoint path `m_j(t)` sampled in time and linearly interpolated.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MidpointPath {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl MidpointPath {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(LabError::InvalidParameter("midpoint path needs matching, non-empty samples".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LabError::InvalidParameter("midpoint times must increase".into()));
        }
        Ok(Self { times, values })
    }

    pub fn constant(m: f64) -> Self {
        Self { times: vec![0.0], values: vec![m] }
    }

    pub fn at(&self, t: f64) -> f64 {
        let n = self.times.len();
        if n == 1 || t <= self.times[0] {
            // Extrapolate with the first slope, clamp for a single sample.
            if n == 1 {
                return self.values[0];
            }
            let slope = (self.values[1] - self.values[0]) / (self.times[1] - self.times[0]);
            return self.values[0] + slope * (t - self.times[0]);
        }
        if t >= self.times[n - 1] {
            let slope = (self.values[n - 1] - self.values[n - 2]) / (self.times[n - 1] - self.times[n - 2]);
            return self.values[n - 1] + slope * (t - self.times[n - 1]);
        }
        let k = self.times.partition_point(|&s| s <= t) - 1;
        let w = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        self.values[k] * (1.0 - w) + self.values[k + 1] * w
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Cutoff steepness and the midpoint paths `m_2, .., m_J`.
#[derive(Clone, Debug, Serialize)]
pub struct CutoffConfig {
    pub sigma: f64,
    midpoints: Vec<MidpointPath>,
    /// Fields are sampled in a frame moving at this velocity; midpoints stay
    /// in the lab frame and are shifted by `-V t` when weights are built.
    frame_velocity: f64,
}

/// `zeta = min(v_2 / 4, tau / 4)`; `None` for fewer than two objects.
pub fn zeta(cfg: &Configuration) -> Option<f64> {
    let tau = cfg.min_velocity_gap()?;
    let v2 = cfg.objects()[1].velocity();
    Some((v2 / 4.0).min(tau / 4.0))
}

/// Default cutoff steepness `min(zeta, beta_min^2) / 2`.
pub fn default_sigma(cfg: &Configuration) -> f64 {
    let b = cfg.min_decay_rate().unwrap_or(1.0);
    match zeta(cfg) {
        Some(z) if z > 0.0 => 0.5 * z.min(b * b),
        _ => 0.5 * b * b,
    }
}

fn rates(times: &[f64], values: &[f64]) -> Vec<f64> {
    let n = times.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|i| {
            let (a, b) = match i {
                0 => (0, 1),
                i if i == n - 1 => (n - 2, n - 1),
                i => (i - 1, i + 1),
            };
            (values[b] - values[a]) / (times[b] - times[a])
        })
        .collect()
}

impl CutoffConfig {
    pub fn new(sigma: f64, midpoints: Vec<MidpointPath>) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(LabError::InvalidParameter(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self { sigma, midpoints, frame_velocity: 0.0 })
    }

    pub fn with_frame_velocity(mut self, v: f64) -> Self {
        self.frame_velocity = v;
        self
    }

    /// Midpoints from sampled object centers: `m_j` is the average of the
    /// centers of objects `j-1` and `j` for `j >= 3`, while `m_2` starts at
    /// the average and moves with speed `max((x_1' + x_2')/2, x_2'/2)`,
    /// integrated by the trapezoid rule.
    ///
    /// `centers[i][k]` is the center of object `k` at `times[i]`.
    pub fn from_centers(sigma: f64, times: &[f64], centers: &[Vec<f64>]) -> Result<Self> {
        if times.len() != centers.len() || times.is_empty() {
            return Err(LabError::InvalidParameter("need one center sample per time".into()));
        }
        let objects = centers[0].len();
        if objects < 2 {
            return Self::new(sigma, Vec::new());
        }
        let track = |k: usize| -> Vec<f64> { centers.iter().map(|c| c[k]).collect() };
        let x1 = track(0);
        let x2 = track(1);
        let (v1, v2) = (rates(times, &x1), rates(times, &x2));
        let speed: Vec<f64> = v1.iter().zip(&v2).map(|(a, b)| (0.5 * (a + b)).max(0.5 * b)).collect();
        let mut m2 = Vec::with_capacity(times.len());
        m2.push(0.5 * (x1[0] + x2[0]));
        for i in 1..times.len() {
            let step = 0.5 * (speed[i] + speed[i - 1]) * (times[i] - times[i - 1]);
            m2.push(m2[i - 1] + step);
        }
        let mut paths = vec![MidpointPath::new(times.to_vec(), m2)?];
        for j in 3..=objects {
            let (left, right) = (track(j - 2), track(j - 1));
            let m = left.iter().zip(&right).map(|(a, b)| 0.5 * (a + b)).collect();
            paths.push(MidpointPath::new(times.to_vec(), m)?);
        }
        Self::new(sigma, paths)
    }

    /// Midpoints driven by the exact centers of `cfg`.
    pub fn from_exact(sigma: f64, cfg: &Configuration, times: &[f64]) -> Result<Self> {
        let centers: Vec<Vec<f64>> = times.iter().map(|&t| cfg.centers(t)).collect();
        Self::from_centers(sigma, times, &centers)
    }

    /// Number of objects `J` the configuration describes.
    pub fn objects(&self) -> usize {
        self.midpoints.len() + 1
    }

    pub fn midpoint(&self, j: usize, t: f64) -> Option<f64> {
        (j >= 2).then(|| self.midpoints.get(j - 2).map(|p| p.at(t))).flatten()
    }

    pub fn midpoint_paths(&self) -> &[MidpointPath] {
        &self.midpoints
    }

    fn check_index(&self, j: usize) -> Result<()> {
        let max = self.objects() + 1;
        if j == 0 || j > max {
            return Err(LabError::IndexOutOfRange { index: j, min: 1, max });
        }
        Ok(())
    }

    /// `Phi_j(t, .)` sampled on the grid; `Phi_1 = 1`, `Phi_{J+1} = 0`.
    pub fn weight(&self, j: usize, t: f64, grid: &Grid) -> Result<Vec<f64>> {
        self.check_index(j)?;
        if j == 1 {
            return Ok(vec![1.0; grid.points()]);
        }
        if j == self.objects() + 1 {
            return Ok(vec![0.0; grid.points()]);
        }
        let m = self.midpoint(j, t).expect("checked index") - self.frame_velocity * t;
        Ok(grid.sample(|x| cutoff_psi(x - m, self.sigma)))
    }
}

/// `(M_j, E_j, F_j)` at the field's time stamp.
pub fn localized_triple(u: &Field, cutoff: &CutoffConfig, j: usize) -> Result<Triple> {
    let w = cutoff.weight(j, u.time(), u.grid())?;
    let d = derivatives(u, 2)?;
    Ok(weighted_triple(u.grid(), &d, &w))
}

/// `H_j = F_j + 2 (b^2 - a^2) E_j + (a^2 + b^2)^2 M_j`.
pub fn lyapunov(u: &Field, cutoff: &CutoffConfig, j: usize, a: f64, b: f64) -> Result<f64> {
    if !(b > 0.0) {
        return Err(LabError::InvalidParameter(format!("b must be positive, got {b}")));
    }
    Ok(lyapunov_combination(localized_triple(u, cutoff, j)?, a, b))
}

/// Pieces of the expansion of the localized functionals at `u = X + eps`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct TaylorParts {
    pub constant: Triple,
    pub linear: Triple,
    pub quadratic: Triple,
    pub remainder: Triple,
}

/// Linear forms `(m_j, e_j, f_j)[X]` and quadratic forms
/// `(M_j, E_j, F_j)[X]` in `eps`, weighted by `w`.
fn expansion_terms(grid: &Grid, x: &[Vec<f64>], e: &[Vec<f64>], w: &[f64]) -> (Triple, Triple) {
    let (mut lm, mut le, mut lf) = (0.0, 0.0, 0.0);
    let (mut qm, mut qe, mut qf) = (0.0, 0.0, 0.0);
    for i in 0..grid.points() {
        let (p, px, pxx) = (x[0][i], x[1][i], x[2][i]);
        let (ep, ex, exx) = (e[0][i], e[1][i], e[2][i]);
        let wi = w[i];
        let p2 = p * p;
        lm += p * ep * wi;
        le += (px * ex - p2 * p * ep) * wi;
        lf += (pxx * exx - 5.0 * p * px * px * ep - 5.0 * p2 * px * ex + 1.5 * p2 * p2 * p * ep) * wi;
        qm += 0.5 * ep * ep * wi;
        qe += (0.5 * ex * ex - 1.5 * p2 * ep * ep) * wi;
        qf += (0.5 * exx * exx - 2.5 * px * px * ep * ep - 10.0 * p * px * ep * ex - 2.5 * p2 * ex * ex
            + 3.75 * p2 * p2 * ep * ep)
            * wi;
    }
    let dx = grid.spacing();
    (Triple::new(lm * dx, le * dx, lf * dx), Triple::new(qm * dx, qe * dx, qf * dx))
}

/// Constant, linear and quadratic parts of `(M_j, E_j, F_j)[P + eps]`
/// around `P`, and the remainder left over.
pub fn taylor_parts(p: &Field, eps: &Field, cutoff: &CutoffConfig, j: usize) -> Result<TaylorParts> {
    if p.grid() != eps.grid() {
        return Err(LabError::GridMismatch);
    }
    if p.time() != eps.time() {
        return Err(LabError::InvalidParameter(format!(
            "profile at t = {} and perturbation at t = {} differ",
            p.time(),
            eps.time()
        )));
    }
    let grid = p.grid();
    let w = cutoff.weight(j, p.time(), grid)?;
    let dp = derivatives(p, 2)?;
    let de = derivatives(eps, 2)?;
    let constant = weighted_triple(grid, &dp, &w);
    let (linear, quadratic) = expansion_terms(grid, &dp, &de, &w);
    let full = weighted_triple(grid, &derivatives(&p.add(eps)?, 2)?, &w);
    let remainder = full.diff(constant.sum(linear).sum(quadratic));
    Ok(TaylorParts { constant, linear, quadratic, remainder })
}

/// Quadratic forms `(M_j, E_j, F_j)[X]` evaluated on `eps`.
pub fn quadratic_forms(x: &Field, eps: &Field, weight: &[f64]) -> Result<Triple> {
    if x.grid() != eps.grid() {
        return Err(LabError::GridMismatch);
    }
    let (_, q) = expansion_terms(x.grid(), &derivatives(x, 2)?, &derivatives(eps, 2)?, weight);
    Ok(q)
}

/// A time-independent weight `f` with its first three derivatives.
#[derive(Clone, Debug)]
pub struct WeightJet {
    pub f: Vec<f64>,
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
    pub f3: Vec<f64>,
}

impl WeightJet {
    pub fn constant(grid: &Grid, value: f64) -> Self {
        let n = grid.points();
        Self { f: vec![value; n], f1: vec![0.0; n], f2: vec![0.0; n], f3: vec![0.0; n] }
    }

    /// `Psi(x - m)`.
    pub fn psi(grid: &Grid, sigma: f64, m: f64) -> Self {
        let jets: Vec<PsiJet> = grid.nodes().iter().map(|&x| psi_jet(x - m, sigma)).collect();
        Self {
            f: jets.iter().map(|j| j.value).collect(),
            f1: jets.iter().map(|j| j.d1).collect(),
            f2: jets.iter().map(|j| j.d2).collect(),
            f3: jets.iter().map(|j| j.d3).collect(),
        }
    }

    /// Weighted `(M, E, F)` densities of `u` with weight `f`.
    pub fn weighted(&self, u: &Field) -> Result<Triple> {
        Ok(weighted_triple(u.grid(), &derivatives(u, 2)?, &self.f))
    }
}

/// Time derivatives of `1/2 int u^2 f`, `int (u_x^2/2 - u^4/4) f` and
/// `int (u_xx^2/2 - 5/2 u^2 u_x^2 + u^6/4) f` along a solution, expressed
/// through `f'`, `f''`, `f'''` only.
pub fn appendix_rhs(u: &Field, weight: &WeightJet) -> Result<Triple> {
    let grid = u.grid();
    let d = derivatives(u, 3)?;
    let (mut m, mut e, mut f) = (0.0, 0.0, 0.0);
    for i in 0..grid.points() {
        let (v, vx, vxx, vxxx) = (d[0][i], d[1][i], d[2][i], d[3][i]);
        let (w1, w2, w3) = (weight.f1[i], weight.f2[i], weight.f3[i]);
        let v2 = v * v;
        let vx2 = vx * vx;
        let vxx2 = vxx * vxx;
        m += (-1.5 * vx2 + 0.75 * v2 * v2) * w1 + 0.5 * v2 * w3;
        let s = vxx + v2 * v;
        e += (-0.5 * s * s - vxx2 + 3.0 * v2 * vx2) * w1 + 0.5 * vx2 * w3;
        f += (-1.5 * vxxx * vxxx + 9.0 * vxx2 * v2 + 15.0 * vx2 * v * vxx + 9.0 / 16.0 * v2.powi(4)
            + 0.25 * vx2 * vx2
            + 1.5 * vxx * v2 * v2 * v
            - 11.25 * v2 * v2 * vx2)
            * w1
            + 5.0 * v2 * vx * vxx * w2
            + 0.5 * vxx2 * w3;
    }
    let dx = grid.spacing();
    Ok(Triple::new(m * dx, e * dx, f * dx))
}

/// All functional values at one time.
#[derive(Clone, Debug, Serialize)]
pub struct FunctionalReport {
    pub time: f64,
    pub mass: f64,
    pub energy: f64,
    pub f_second: f64,
    /// `(M_j, E_j, F_j)` for `j = 1..=J`.
    pub localized: Vec<Triple>,
    /// `H_j` for `j = 1..=J`.
    pub lyapunov: Vec<f64>,
    /// Quadratic forms around the `j`-th fitted object, for `j = 1..=J`.
    pub quadratic_parts: Vec<Triple>,
    /// `Q_j = F_j + 2(b^2-a^2) E_j + (a^2+b^2)^2 M_j` of the quadratic parts.
    pub quadratic_lyapunov: Vec<f64>,
}

/// Evaluates every functional of `u` against the fitted decomposition
/// `u = eval_sum(fitted) + eps`.
pub fn functional_report(u: &Field, cutoff: &CutoffConfig, fitted: &Configuration) -> Result<FunctionalReport> {
    let grid = u.grid();
    let t = u.time();
    let du = derivatives(u, 2)?;
    let global = weighted_triple(grid, &du, &vec![1.0; grid.points()]);
    let eps = u.sub(&eval_sum(fitted, t, grid))?;
    let de = derivatives(&eps, 2)?;
    let objects = fitted.len();
    let mut report = FunctionalReport {
        time: t,
        mass: global.mass,
        energy: global.energy,
        f_second: global.f_second,
        localized: Vec::with_capacity(objects),
        lyapunov: Vec::with_capacity(objects),
        quadratic_parts: Vec::with_capacity(objects),
        quadratic_lyapunov: Vec::with_capacity(objects),
    };
    for (k, o) in fitted.objects().iter().enumerate() {
        let j = k + 1;
        let w = cutoff.weight(j, t, grid)?;
        let local = weighted_triple(grid, &du, &w);
        let (a, b) = o.lyapunov_coefficients();
        let dx = derivatives(&eval_object(o, t, grid), 2)?;
        let (_, quad) = expansion_terms(grid, &dx, &de, &w);
        report.localized.push(local);
        report.lyapunov.push(lyapunov_combination(local, a, b));
        report.quadratic_parts.push(quad);
        report.quadratic_lyapunov.push(lyapunov_combination(quad, a, b));
    }
    Ok(report)
}

/// Convenience for tests and reports: `int f g w`.
pub fn weighted_inner(grid: &Grid, f: &[f64], g: &[f64], w: &[f64]) -> f64 {
    let fg: Vec<f64> = f.iter().zip(g).map(|(a, b)| a * b).collect();
    dot(grid, &fg, w)
}
