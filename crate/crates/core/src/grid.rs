//! Periodic grid, Fourier differentiation, quadrature and Sobolev norms.
//!
//! The problem lives on the whole line; numerically it is truncated to a
//! periodic box `[-L/2, L/2)` sampled at `N` uniformly spaced nodes. Every
//! profile handled by this crate decays exponentially, so with a large
//! enough box the periodic images are below round-off.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{LabError, Result};

/// Highest derivative order the spectral machinery supports.
pub const MAX_DERIVATIVE_ORDER: u32 = 4;

struct Transforms {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    wavenumbers: Vec<f64>,
}

/// Uniform periodic grid with cached FFT plans.
///
/// Cloning is cheap: plans and wavenumbers are shared.
#[derive(Clone)]
pub struct Grid {
    length: f64,
    points: usize,
    transforms: Arc<Transforms>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("length", &self.length)
            .field("points", &self.points)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.points == other.points && self.length.to_bits() == other.length.to_bits()
    }
}

impl Grid {
    pub fn new(length: f64, points: usize) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(LabError::InvalidGrid(format!("length must be positive, got {length}")));
        }
        if points < 16 || !points.is_power_of_two() {
            return Err(LabError::InvalidGrid(format!(
                "points must be a power of two >= 16, got {points}"
            )));
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(points);
        let inverse = planner.plan_fft_inverse(points);
        let base = 2.0 * PI / length;
        let half = points / 2;
        // Standard ordering 0, 1, .., N/2-1, -N/2, .., -1. The Nyquist entry
        // carries |k| so even-order multipliers stay real.
        let wavenumbers = (0..points)
            .map(|j| {
                if j < half {
                    base * j as f64
                } else if j == half {
                    base * half as f64
                } else {
                    base * (j as f64 - points as f64)
                }
            })
            .collect();
        Ok(Self {
            length,
            points,
            transforms: Arc::new(Transforms { forward, inverse, wavenumbers }),
        })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.points as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        -0.5 * self.length + i as f64 * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.points).map(|i| self.node(i)).collect()
    }

    /// Angular wavenumbers in FFT order.
    pub fn wavenumbers(&self) -> &[f64] {
        &self.transforms.wavenumbers
    }

    pub fn nyquist_index(&self) -> usize {
        self.points / 2
    }

    /// Largest resolved wavenumber `pi N / L`.
    pub fn max_wavenumber(&self) -> f64 {
        PI * self.points as f64 / self.length
    }

    /// Unnormalized forward transform of real samples.
    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(values.len(), self.points);
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transforms.forward.process(&mut buf);
        buf
    }

    /// In-place forward transform.
    pub fn forward_in_place(&self, buf: &mut [Complex64]) {
        self.transforms.forward.process(buf);
    }

    /// Inverse transform returning the real part, normalized by `1/N`.
    pub fn inverse(&self, spectrum: &[Complex64]) -> Vec<f64> {
        let mut buf = spectrum.to_vec();
        self.transforms.inverse.process(&mut buf);
        let scale = 1.0 / self.points as f64;
        buf.iter().map(|c| c.re * scale).collect()
    }

    /// In-place inverse transform, normalized by `1/N`.
    pub fn inverse_in_place(&self, buf: &mut [Complex64]) {
        self.transforms.inverse.process(buf);
        let scale = 1.0 / self.points as f64;
        for c in buf.iter_mut() {
            *c *= scale;
        }
    }

    /// Fourier multiplier of `d^order/dx^order` for mode `j`.
    pub fn derivative_multiplier(&self, j: usize, order: u32) -> Complex64 {
        if order % 2 == 1 && j == self.nyquist_index() {
            return Complex64::new(0.0, 0.0);
        }
        Complex64::new(0.0, self.wavenumbers()[j]).powu(order)
    }

    /// Samples `f` at the nodes.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..self.points).map(|i| f(self.node(i))).collect()
    }
}

/// Real samples on a grid at a time stamp.
#[derive(Clone, Debug)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
    time: f64,
}

impl Field {
    pub fn new(grid: &Grid, values: Vec<f64>, time: f64) -> Result<Self> {
        if values.len() != grid.points() {
            return Err(LabError::SizeMismatch { expected: grid.points(), found: values.len() });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(LabError::NonFinite { index });
        }
        Ok(Self { grid: grid.clone(), values, time })
    }

    /// Construction for values that are finite by construction (closed forms,
    /// sums of finite fields). Still checked in debug builds.
    pub(crate) fn from_parts(grid: &Grid, values: Vec<f64>, time: f64) -> Self {
        debug_assert_eq!(values.len(), grid.points());
        Self { grid: grid.clone(), values, time }
    }

    pub fn zeros(grid: &Grid, time: f64) -> Self {
        Self::from_parts(grid, vec![0.0; grid.points()], time)
    }

    pub fn from_fn(grid: &Grid, time: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.sample(f), time)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    pub fn ensure_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(LabError::NonFinite { index }),
            None => Ok(()),
        }
    }

    fn check_same_grid(&self, other: &Field) -> Result<()> {
        if self.grid != other.grid {
            return Err(LabError::GridMismatch);
        }
        Ok(())
    }

    /// `a * self + b * other`, keeping this field's time stamp.
    pub fn axpby(&self, a: f64, other: &Field, b: f64) -> Result<Field> {
        self.check_same_grid(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(Field::from_parts(&self.grid, values, self.time))
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.axpby(1.0, other, -1.0)
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.axpby(1.0, other, 1.0)
    }

    pub fn scale(&self, s: f64) -> Field {
        Field::from_parts(&self.grid, self.values.iter().map(|v| s * v).collect(), self.time)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::from_parts(&self.grid, self.values.iter().map(|&v| f(v)).collect(), self.time)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Largest magnitude among the two boundary nodes and their neighbours,
    /// used to detect profiles that wrap around the periodic box.
    pub fn boundary_tail(&self) -> f64 {
        let n = self.values.len();
        [0, 1, n - 2, n - 1].iter().fold(0.0_f64, |m, &i| m.max(self.values[i].abs()))
    }
}

/// Spatial derivatives of orders `0..=max_order` sharing one forward transform.
pub fn derivatives(f: &Field, max_order: u32) -> Result<Vec<Vec<f64>>> {
    f.ensure_finite()?;
    if max_order > MAX_DERIVATIVE_ORDER {
        return Err(LabError::InvalidParameter(format!(
            "derivative order {max_order} exceeds {MAX_DERIVATIVE_ORDER}"
        )));
    }
    let grid = f.grid();
    let spectrum = grid.forward(f.values());
    let mut out = Vec::with_capacity(max_order as usize + 1);
    out.push(f.values().to_vec());
    for order in 1..=max_order {
        let mut buf: Vec<Complex64> = spectrum
            .iter()
            .enumerate()
            .map(|(j, c)| c * grid.derivative_multiplier(j, order))
            .collect();
        grid.inverse_in_place(&mut buf);
        out.push(buf.iter().map(|c| c.re).collect());
    }
    Ok(out)
}

/// Like [`derivatives`], but Fourier coefficients below `floor` times the
/// largest coefficient are treated as round-off and dropped first. Keeps
/// high-order derivatives of smooth profiles from amplifying FFT noise by
/// `k^order`. Not linear in `f`.
pub fn derivatives_denoised(f: &Field, max_order: u32, floor: f64) -> Result<Vec<Vec<f64>>> {
    f.ensure_finite()?;
    if max_order > MAX_DERIVATIVE_ORDER {
        return Err(LabError::InvalidParameter(format!(
            "derivative order {max_order} exceeds {MAX_DERIVATIVE_ORDER}"
        )));
    }
    let grid = f.grid();
    let mut spectrum = grid.forward(f.values());
    let peak = spectrum.iter().fold(0.0_f64, |m, c| m.max(c.norm()));
    for c in spectrum.iter_mut() {
        if c.norm() < floor * peak {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    let mut out = Vec::with_capacity(max_order as usize + 1);
    for order in 0..=max_order {
        let mut buf: Vec<Complex64> = spectrum
            .iter()
            .enumerate()
            .map(|(j, c)| c * grid.derivative_multiplier(j, order))
            .collect();
        grid.inverse_in_place(&mut buf);
        out.push(buf.iter().map(|c| c.re).collect());
    }
    Ok(out)
}

/// `order`-th spatial derivative through the multiplier `(ik)^order`.
pub fn spectral_derivative(f: &Field, order: u32) -> Result<Field> {
    if order == 0 || order > MAX_DERIVATIVE_ORDER {
        return Err(LabError::InvalidParameter(format!(
            "derivative order must be in 1..={MAX_DERIVATIVE_ORDER}, got {order}"
        )));
    }
    let mut all = derivatives(f, order)?;
    let values = all.pop().expect("at least one derivative");
    Ok(Field::from_parts(f.grid(), values, f.time()))
}

/// Periodic trapezoid rule `dx * sum(values)`.
pub fn quadrature(f: &Field) -> f64 {
    integrate_samples(f.grid(), f.values())
}

pub(crate) fn integrate_samples(grid: &Grid, values: &[f64]) -> f64 {
    grid.spacing() * values.iter().sum::<f64>()
}

/// `int f * g dx` on the grid.
pub fn inner(f: &Field, g: &Field) -> Result<f64> {
    f.check_same_grid(g)?;
    Ok(dot(f.grid(), f.values(), g.values()))
}

pub(crate) fn dot(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    grid.spacing() * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}

/// Squared H^2 norm `int (f^2 + f_x^2 + f_xx^2)`.
pub fn h2_norm_sq(f: &Field) -> Result<f64> {
    let d = derivatives(f, 2)?;
    let grid = f.grid();
    Ok((0..grid.points()).map(|i| d[0][i].powi(2) + d[1][i].powi(2) + d[2][i].powi(2)).sum::<f64>()
        * grid.spacing())
}

pub fn h2_norm(f: &Field) -> Result<f64> {
    Ok(h2_norm_sq(f)?.sqrt())
}

/// Real-input transform of even length `N` through one complex transform of
/// length `N/2`. Works on the half spectrum `k = 0..=N/2`; the forward
/// direction is unnormalized and the inverse divides by `N`, matching
/// [`Grid::forward`] and [`Grid::inverse`].
pub(crate) struct RealFft {
    half: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// `exp(-2 pi i k / N)` for `k < N/2`.
    twiddles: Vec<Complex64>,
    buf: Vec<Complex64>,
}

impl RealFft {
    pub fn new(points: usize) -> Self {
        let half = points / 2;
        let mut planner = FftPlanner::new();
        let twiddles = (0..half)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / points as f64))
            .collect();
        Self {
            half,
            forward: planner.plan_fft_forward(half),
            inverse: planner.plan_fft_inverse(half),
            twiddles,
            buf: vec![Complex64::new(0.0, 0.0); half],
        }
    }

    /// `out` has length `N/2 + 1`.
    pub fn forward(&mut self, input: &[f64], out: &mut [Complex64]) {
        let m = self.half;
        for (n, z) in self.buf.iter_mut().enumerate() {
            *z = Complex64::new(input[2 * n], input[2 * n + 1]);
        }
        self.forward.process(&mut self.buf);
        let z0 = self.buf[0];
        out[0] = Complex64::new(z0.re + z0.im, 0.0);
        out[m] = Complex64::new(z0.re - z0.im, 0.0);
        for k in 1..m {
            let a = self.buf[k];
            let b = self.buf[m - k].conj();
            let even = (a + b) * 0.5;
            let odd = (a - b) * Complex64::new(0.0, -0.5);
            out[k] = even + self.twiddles[k] * odd;
        }
    }

    /// `spectrum` has length `N/2 + 1`; the imaginary parts of the `k = 0`
    /// and `k = N/2` entries are ignored.
    pub fn inverse(&mut self, spectrum: &[Complex64], out: &mut [f64]) {
        let m = self.half;
        for k in 0..m {
            let a = spectrum[k];
            let b = spectrum[m - k].conj();
            let even = (a + b) * 0.5;
            let odd = (a - b) * 0.5 * self.twiddles[k].conj();
            self.buf[k] = even + Complex64::new(0.0, 1.0) * odd;
        }
        self.inverse.process(&mut self.buf);
        let scale = 1.0 / (2 * m) as f64 * 2.0;
        for (n, z) in self.buf.iter().enumerate() {
            out[2 * n] = z.re * scale;
            out[2 * n + 1] = z.im * scale;
        }
    }
}
