//! Pseudo-spectral time stepping for `u_t + (u_xx + u^3)_x = 0`.
//!
//! In Fourier space the equation reads `v_t = L v + N(v)` with the diagonal
//! dispersion `L = i k^3` and `N(v) = -i k F[u^3]`. The linear part is
//! propagated exactly; the nonlinear part is advanced by a fourth-order
//! exponential Runge-Kutta scheme (Cox-Matthews ETD-RK4, coefficients by the
//! Kassam-Trefethen contour average) or, as a cross-check, by RK4 in the
//! integrating-factor variable.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::exact::{eval_soliton, SolitonParams, Sign};
use crate::functionals::{conserved, Triple};
use crate::grid::{h2_norm, Field, Grid, RealFft};

/// Points on the contour used to evaluate the phi-functions.
const CONTOUR_POINTS: usize = 64;

/// Above this value of `dt * 3 max|u|^2 k_cut` the explicit treatment of the
/// nonlinear term leaves the RK4 stability region on the imaginary axis.
const STABILITY_LIMIT: f64 = 2.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    #[serde(rename = "etd-rk4", alias = "ETD-RK4")]
    EtdRk4,
    #[serde(rename = "if-rk4", alias = "IF-RK4")]
    IfRk4,
}

/// Time stepping parameters.
///
/// `t_final` is the length of the integration interval measured from the
/// initial field's time stamp. A negative `dt` together with a negative
/// `t_final` integrates backwards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_final: f64,
    #[serde(default = "default_dealias")]
    pub dealias: f64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
    /// Velocity `V` of the computational frame: the solver evolves
    /// `w(t, x) = u(t, x + V t)`, which adds the exact linear term `V w_x`.
    #[serde(default)]
    pub frame_velocity: f64,
}

fn default_dealias() -> f64 {
    2.0 / 3.0
}

fn default_stride() -> usize {
    1
}

impl SolverConfig {
    pub fn new(dt: f64, t_final: f64) -> Result<Self> {
        let cfg = Self {
            dt,
            t_final,
            dealias: default_dealias(),
            scheme: Scheme::EtdRk4,
            snapshot_stride: 1,
            frame_velocity: 0.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Result<Self> {
        self.snapshot_stride = stride;
        self.validate()?;
        Ok(self)
    }

    pub fn with_dealias(mut self, dealias: f64) -> Result<Self> {
        self.dealias = dealias;
        self.validate()?;
        Ok(self)
    }

    pub fn with_frame_velocity(mut self, v: f64) -> Result<Self> {
        self.frame_velocity = v;
        self.validate()?;
        Ok(self)
    }

    /// Same configuration run in the opposite time direction.
    pub fn reversed(&self) -> Self {
        Self { dt: -self.dt, t_final: -self.t_final, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt != 0.0) {
            return Err(LabError::InvalidParameter(format!("dt must be finite and nonzero, got {}", self.dt)));
        }
        if !(self.t_final.is_finite() && self.t_final != 0.0) || self.t_final.signum() != self.dt.signum() {
            return Err(LabError::InvalidParameter(format!(
                "t_final = {} must be nonzero with the sign of dt = {}",
                self.t_final, self.dt
            )));
        }
        if !(self.dealias > 0.0 && self.dealias <= 1.0) {
            return Err(LabError::InvalidParameter(format!("dealias fraction must lie in (0, 1], got {}", self.dealias)));
        }
        if !self.frame_velocity.is_finite() {
            return Err(LabError::InvalidParameter("frame velocity must be finite".into()));
        }
        if self.snapshot_stride == 0 {
            return Err(LabError::InvalidParameter("snapshot_stride must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of steps; `dt` is shrunk slightly when it does not divide `t_final`.
    pub fn steps(&self) -> usize {
        ((self.t_final / self.dt) - 1e-9).ceil().max(1.0) as usize
    }

    /// The step actually taken, `t_final / steps`.
    pub fn effective_dt(&self) -> f64 {
        self.t_final / self.steps() as f64
    }

    /// `dt * 3 max|u|^2 k_cut`: the explicit part's step relative to its
    /// fastest linearized frequency.
    pub fn stability_number(&self, u: &Field) -> f64 {
        let kcut = self.dealias * u.grid().max_wavenumber();
        self.dt.abs() * 3.0 * u.max_abs().powi(2) * kcut
    }
}

/// Per-snapshot conserved quantities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Diagnostics {
    pub time: f64,
    pub conserved: Triple,
}

/// Snapshots of an integration, ordered in the direction of integration.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub snapshots: Vec<Field>,
    pub diagnostics: Vec<Diagnostics>,
    pub config: SolverConfig,
}

impl Trajectory {
    pub fn last(&self) -> &Field {
        self.snapshots.last().expect("a trajectory holds at least the initial field")
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(Field::time).collect()
    }

    /// Largest relative change of M, E and F against the first snapshot.
    pub fn max_relative_drift(&self) -> Triple {
        let first = self.diagnostics[0].conserved;
        let rel = |now: f64, then: f64| (now - then).abs() / then.abs().max(f64::MIN_POSITIVE);
        self.diagnostics.iter().fold(Triple::default(), |acc, d| {
            Triple::new(
                acc.mass.max(rel(d.conserved.mass, first.mass)),
                acc.energy.max(rel(d.conserved.energy, first.energy)),
                acc.f_second.max(rel(d.conserved.f_second, first.f_second)),
            )
        })
    }
}

/// Precomputed propagators and scratch space for one grid and step size.
///
/// Spectra handled by the stepper are half spectra `k = 0..=N/2` of real
/// fields; see [`Stepper::forward`] and [`Stepper::inverse`].
pub struct Stepper {
    scheme: Scheme,
    dt: f64,
    fft: RealFft,
    /// `-i k` times the dealiasing mask.
    nonlinear: Vec<Complex64>,
    e: Vec<Complex64>,
    e2: Vec<Complex64>,
    q: Vec<Complex64>,
    f1: Vec<Complex64>,
    f2: Vec<Complex64>,
    f3: Vec<Complex64>,
    real: Vec<f64>,
    stages: [Vec<Complex64>; 7],
}

impl Stepper {
    pub fn new(grid: &Grid, dt: f64, dealias: f64, scheme: Scheme, frame_velocity: f64) -> Self {
        let n = grid.points();
        let m = grid.nyquist_index() + 1;
        let kcut = dealias * grid.max_wavenumber();
        let nonlinear = (0..m)
            .map(|j| {
                let k = grid.wavenumbers()[j];
                if j == grid.nyquist_index() || k.abs() > kcut * (1.0 + 1e-12) {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::new(0.0, -k)
                }
            })
            .collect();
        // L = i (k^3 + V k), zero at the Nyquist mode like every odd-order multiplier.
        let lin: Vec<Complex64> = (0..m)
            .map(|j| -grid.derivative_multiplier(j, 3) + grid.derivative_multiplier(j, 1) * frame_velocity)
            .collect();
        let e = lin.iter().map(|l| (l * dt).exp()).collect();
        let e2 = lin.iter().map(|l| (l * dt * 0.5).exp()).collect();
        let zero = Complex64::new(0.0, 0.0);
        let mut q = vec![zero; m];
        let mut f1 = q.clone();
        let mut f2 = q.clone();
        let mut f3 = q.clone();
        if scheme == Scheme::EtdRk4 {
            let roots: Vec<Complex64> = (0..CONTOUR_POINTS)
                .map(|i| Complex64::from_polar(1.0, 2.0 * PI * (i as f64 + 0.5) / CONTOUR_POINTS as f64))
                .collect();
            let inv = 1.0 / CONTOUR_POINTS as f64;
            for j in 0..m {
                let hl = lin[j] * dt;
                let (mut sq, mut s1, mut s2, mut s3) = Default::default();
                for root in &roots {
                    let r: Complex64 = hl + root;
                    let er = r.exp();
                    let r3 = r * r * r;
                    sq += ((r * 0.5).exp() - 1.0) / r;
                    s1 += (-4.0 - r + er * (4.0 - 3.0 * r + r * r)) / r3;
                    s2 += (2.0 + r + er * (r - 2.0)) / r3;
                    s3 += (-4.0 - 3.0 * r - r * r + er * (4.0 - r)) / r3;
                }
                let avg = |s: Complex64| s * inv * dt;
                q[j] = avg(sq);
                f1[j] = avg(s1);
                f2[j] = avg(s2);
                f3[j] = avg(s3);
            }
        }
        Self {
            scheme,
            dt,
            fft: RealFft::new(n),
            nonlinear,
            e,
            e2,
            q,
            f1,
            f2,
            f3,
            real: vec![0.0; n],
            stages: std::array::from_fn(|_| vec![zero; m]),
        }
    }

    pub fn from_config(grid: &Grid, cfg: &SolverConfig) -> Self {
        Self::new(grid, cfg.effective_dt(), cfg.dealias, cfg.scheme, cfg.frame_velocity)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Half spectrum of real samples.
    pub fn forward(&mut self, values: &[f64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.e.len()];
        self.fft.forward(values, &mut out);
        out
    }

    /// Real samples of a half spectrum.
    pub fn inverse(&mut self, spectrum: &[Complex64]) -> Vec<f64> {
        let mut out = vec![0.0; self.real.len()];
        self.fft.inverse(spectrum, &mut out);
        out
    }

    /// `N(v) = -i k mask F[(F^{-1} v)^3]`, written into `out`.
    fn eval_nonlinear(fft: &mut RealFft, real: &mut [f64], mask: &[Complex64], v: &[Complex64], out: &mut [Complex64]) {
        fft.inverse(v, real);
        for x in real.iter_mut() {
            *x = *x * *x * *x;
        }
        fft.forward(real, out);
        for (o, m) in out.iter_mut().zip(mask) {
            *o *= m;
        }
    }

    /// Advances the half spectrum `v` by one step in place.
    pub fn advance(&mut self, v: &mut [Complex64]) {
        let n = v.len();
        let [nv, na, nb, nc, a, b, c] = &mut self.stages;
        let (fft, real, mask) = (&mut self.fft, &mut self.real, &self.nonlinear);
        Self::eval_nonlinear(fft, real, mask, v, nv);
        match self.scheme {
            Scheme::EtdRk4 => {
                for j in 0..n {
                    a[j] = self.e2[j] * v[j] + self.q[j] * nv[j];
                }
                Self::eval_nonlinear(fft, real, mask, a, na);
                for j in 0..n {
                    b[j] = self.e2[j] * v[j] + self.q[j] * na[j];
                }
                Self::eval_nonlinear(fft, real, mask, b, nb);
                for j in 0..n {
                    c[j] = self.e2[j] * a[j] + self.q[j] * (2.0 * nb[j] - nv[j]);
                }
                Self::eval_nonlinear(fft, real, mask, c, nc);
                for j in 0..n {
                    v[j] = self.e[j] * v[j]
                        + self.f1[j] * nv[j]
                        + 2.0 * self.f2[j] * (na[j] + nb[j])
                        + self.f3[j] * nc[j];
                }
            }
            Scheme::IfRk4 => {
                let h = self.dt;
                for j in 0..n {
                    a[j] = self.e2[j] * (v[j] + 0.5 * h * nv[j]);
                }
                Self::eval_nonlinear(fft, real, mask, a, na);
                for j in 0..n {
                    b[j] = self.e2[j] * v[j] + 0.5 * h * na[j];
                }
                Self::eval_nonlinear(fft, real, mask, b, nb);
                for j in 0..n {
                    c[j] = self.e[j] * v[j] + h * self.e2[j] * nb[j];
                }
                Self::eval_nonlinear(fft, real, mask, c, nc);
                for j in 0..n {
                    v[j] = self.e[j] * v[j]
                        + h / 6.0 * (self.e[j] * nv[j] + 2.0 * self.e2[j] * (na[j] + nb[j]) + nc[j]);
                }
            }
        }
    }
}

/// One step of size `cfg.effective_dt()`.
pub fn step(u: &Field, cfg: &SolverConfig) -> Result<Field> {
    cfg.validate()?;
    u.ensure_finite()?;
    let grid = u.grid();
    let mut stepper = Stepper::from_config(grid, cfg);
    let mut v = stepper.forward(u.values());
    stepper.advance(&mut v);
    let time = u.time() + stepper.dt();
    let values = stepper.inverse(&v);
    if values.iter().any(|x| !x.is_finite()) {
        return Err(LabError::Blowup { step: 1, time });
    }
    Field::new(grid, values, time)
}

/// Integrates over `cfg.t_final`, keeping every `snapshot_stride`-th state.
///
/// The number of steps must be a multiple of the stride so snapshots are
/// uniformly spaced; the initial and final states are always kept.
pub fn integrate(u0: &Field, cfg: &SolverConfig) -> Result<Trajectory> {
    match integrate_partial(u0, cfg)? {
        (traj, None) => Ok(traj),
        (_, Some(e)) => Err(e),
    }
}

/// Like [`integrate`], but a failure during stepping still returns the
/// snapshots gathered before it, together with the error.
pub fn integrate_partial(u0: &Field, cfg: &SolverConfig) -> Result<(Trajectory, Option<LabError>)> {
    cfg.validate()?;
    u0.ensure_finite()?;
    let steps = cfg.steps();
    if steps % cfg.snapshot_stride != 0 {
        return Err(LabError::InvalidParameter(format!(
            "{steps} steps are not a multiple of the snapshot stride {}",
            cfg.snapshot_stride
        )));
    }
    let stability = cfg.stability_number(u0);
    if stability > STABILITY_LIMIT {
        log::warn!("stability number {stability:.2} exceeds {STABILITY_LIMIT}; consider a smaller dt");
    }
    let grid = u0.grid();
    let mut stepper = Stepper::from_config(grid, cfg);
    let h = stepper.dt();
    let mut v = stepper.forward(u0.values());
    let mut traj = Trajectory {
        snapshots: vec![u0.clone()],
        diagnostics: vec![Diagnostics { time: u0.time(), conserved: conserved(u0)? }],
        config: cfg.clone(),
    };
    for n in 1..=steps {
        stepper.advance(&mut v);
        let time = u0.time() + n as f64 * h;
        if v.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Ok((traj, Some(LabError::Blowup { step: n, time })));
        }
        if n % cfg.snapshot_stride == 0 {
            let u = match Field::new(grid, stepper.inverse(&v), time) {
                Ok(u) => u,
                Err(_) => return Ok((traj, Some(LabError::Blowup { step: n, time }))),
            };
            traj.diagnostics.push(Diagnostics { time, conserved: conserved(&u)? });
            traj.snapshots.push(u);
        }
    }
    log::debug!("integrated {steps} steps of {h:e}");
    Ok((traj, None))
}

/// Final state only, without storing intermediate snapshots.
pub fn propagate(u0: &Field, cfg: &SolverConfig) -> Result<Field> {
    let cfg = SolverConfig { snapshot_stride: cfg.steps(), ..cfg.clone() };
    let traj = integrate(u0, &cfg)?;
    Ok(traj.snapshots.into_iter().last().expect("final snapshot"))
}

/// Halves `dt` until a c = 1 soliton integrated over `probe_time` on `grid`
/// either matches its closed form to `tol` in H^2 or shows fourth-order
/// self-convergence. Gives up after `max_halvings`.
pub fn calibrate_dt(grid: &Grid, dt: f64, probe_time: f64, tol: f64, max_halvings: usize) -> Result<f64> {
    let p = SolitonParams::new(1.0, Sign::Plus, 0.0)?;
    let u0 = eval_soliton(&p, 0.0, grid);
    let exact = eval_soliton(&p, probe_time, grid);
    let error = |h: f64| -> Result<f64> {
        let u = propagate(&u0, &SolverConfig::new(h, probe_time)?)?;
        h2_norm(&u.sub(&exact)?)
    };
    let mut h = dt;
    let mut err = error(h)?;
    for _ in 0..max_halvings {
        if err <= tol {
            return Ok(h);
        }
        let finer = error(h / 2.0)?;
        let order = (err / finer).log2();
        if (3.5..=4.5).contains(&order) && finer <= tol {
            return Ok(h / 2.0);
        }
        h /= 2.0;
        err = finer;
    }
    if err <= tol {
        return Ok(h);
    }
    Err(LabError::InvalidParameter(format!("no step size down to {h:e} reached error {tol:e} (got {err:e})")))
}

const MAGIC: &[u8; 4] = b"MKDV";
const FORMAT_VERSION: u32 = 1;

/// Writes snapshots in the binary dump format: a 24-byte little-endian
/// header (`"MKDV"`, version u32, points u32, reserved u32 = 0, length f64)
/// followed, per snapshot, by `points + 1` f64 values: the time, then the samples.
pub fn write_snapshots(path: &Path, snapshots: &[Field]) -> Result<()> {
    let grid = match snapshots.first() {
        Some(f) => f.grid().clone(),
        None => return Err(LabError::InvalidParameter("no snapshots to write".into())),
    };
    let points = u32::try_from(grid.points())
        .map_err(|_| LabError::InvalidParameter("too many points for the snapshot format".into()))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&points.to_le_bytes())?;
    w.write_all(&0u32.to_le_bytes())?;
    w.write_all(&grid.length().to_le_bytes())?;
    for f in snapshots {
        if f.grid() != &grid {
            return Err(LabError::GridMismatch);
        }
        w.write_all(&f.time().to_le_bytes())?;
        for v in f.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_snapshots`].
pub fn read_snapshots(path: &Path) -> Result<Vec<Field>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let bad = |msg: &str| LabError::InvalidParameter(format!("snapshot file: {msg}"));
    if bytes.len() < 24 || &bytes[0..4] != MAGIC {
        return Err(bad("missing header"));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let f64_at = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
    if u32_at(4) != FORMAT_VERSION {
        return Err(bad("unsupported version"));
    }
    let points = u32_at(8) as usize;
    let grid = Grid::new(f64_at(16), points)?;
    let record = 8 * (points + 1);
    let body = &bytes[24..];
    if body.len() % record != 0 {
        return Err(bad("truncated record"));
    }
    body.chunks(record)
        .map(|chunk| {
            let vals: Vec<f64> =
                chunk.chunks(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
            Field::new(&grid, vals[1..].to_vec(), vals[0])
        })
        .collect()
}
