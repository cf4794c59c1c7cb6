//! Built-in identity suite behind `mkdv-lab verify`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::exact::{elliptic_residual, eval_breather, eval_object, eval_sum, BreatherParams, Configuration, ObjectParams, Sign};
use crate::functionals::{appendix_rhs, conserved, cutoff_psi, lyapunov, psi_jet, taylor_parts, CutoffConfig, Triple, WeightJet};
use crate::grid::{Field, Grid};

#[derive(Clone, Debug, Serialize)]
pub struct VerifyItem {
    pub name: String,
    /// Measured error (or bound violation); compared against `tolerance`.
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl VerifyItem {
    fn new(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self { name: name.into(), value, tolerance, passed: value <= tolerance }
    }
}

pub const VERIFY_POINTS: usize = 2048;
pub const VERIFY_LENGTH: f64 = 100.0;

fn soliton(c: f64, x0: f64) -> ObjectParams {
    ObjectParams::soliton(c, Sign::Plus, x0).expect("valid soliton")
}

fn breather(alpha: f64, beta: f64, x1: f64, x2: f64) -> ObjectParams {
    ObjectParams::breather(alpha, beta, x1, x2).expect("valid breather")
}

fn elliptic(g: &Grid) -> Result<Vec<VerifyItem>> {
    let mut out = Vec::new();
    for c in [0.5, 1.0, 2.0] {
        let r = elliptic_residual(&soliton(c, 0.0), 0.0, g)?;
        out.push(VerifyItem::new(format!("elliptic residual, soliton c={c}"), r, 1e-9));
    }
    for (a, b) in [(1.0, 2.0), (0.8, 2.0), (1.0, 1.0)] {
        let r = elliptic_residual(&breather(a, b, 0.0, 0.0), 0.0, g)?;
        out.push(VerifyItem::new(format!("elliptic residual, breather ({a},{b})"), r, 1e-8));
    }
    Ok(out)
}

fn anchors(g: &Grid) -> Result<Vec<VerifyItem>> {
    let mut out = Vec::new();
    let q = conserved(&eval_object(&soliton(1.0, 0.0), 0.0, g))?;
    out.push(VerifyItem::new("M[Q] = 2", (q.mass - 2.0).abs(), 1e-10));
    out.push(VerifyItem::new("E[Q] = -2/3", (q.energy + 2.0 / 3.0).abs(), 1e-10));
    out.push(VerifyItem::new("F[Q] = 2/5", (q.f_second - 0.4).abs(), 1e-10));
    let cut = CutoffConfig::new(1.0, Vec::new())?;
    for c in [0.5_f64, 2.0] {
        let field = eval_object(&soliton(c, 0.0), 0.0, g);
        let t = conserved(&field)?;
        let err = (t.mass - 2.0 * c.sqrt())
            .abs()
            .max((t.energy + 2.0 / 3.0 * c.powf(1.5)).abs())
            .max((t.f_second - 0.4 * c.powf(2.5)).abs());
        out.push(VerifyItem::new(format!("scaling laws, c={c}"), err, 1e-9));
        let h = lyapunov(&field, &cut, 1, 0.0, c.sqrt())?;
        out.push(VerifyItem::new(format!("F+2E+M on Q_c = 16/15 c^(5/2), c={c}"), (h - 16.0 / 15.0 * c.powf(2.5)).abs(), 1e-9));
    }
    Ok(out)
}

/// Worst relative violation of the cutoff bounds over a range of arguments;
/// zero when every bound holds.
fn psi_properties() -> Vec<VerifyItem> {
    let mut symmetry = 0.0_f64;
    let mut positivity = 0.0_f64;
    let mut bounds = 0.0_f64;
    for sigma in [0.05_f64, 0.3, 1.0] {
        let s = sigma.sqrt() / 2.0;
        for i in 0..=4000 {
            let x = -100.0 + 0.05 * i as f64;
            let p = psi_jet(x, sigma);
            symmetry = symmetry.max((cutoff_psi(x, sigma) + cutoff_psi(-x, sigma) - 1.0).abs());
            if !(p.d1 > 0.0) {
                positivity = positivity.max(1.0);
            }
            let excess = |lhs: f64, rhs: f64| if lhs > rhs * (1.0 + 1e-12) + 1e-300 { (lhs - rhs) / rhs.max(1e-300) } else { 0.0 };
            bounds = bounds
                .max(excess(p.d2.abs(), s * p.d1))
                .max(excess(p.d1, s * p.value))
                .max(excess(p.d1, s * (1.0 - p.value) + 1e-15))
                .max(excess(p.d3.abs(), s * s * p.d1));
        }
    }
    vec![
        VerifyItem::new("Psi(0) = 1/2", (cutoff_psi(0.0, 0.3) - 0.5).abs(), 1e-15),
        VerifyItem::new("Psi(x) + Psi(-x) = 1", symmetry, 1e-15),
        VerifyItem::new("Psi' > 0", positivity, 0.0),
        VerifyItem::new("|Psi''|, Psi', |Psi'''| bounds", bounds, 0.0),
        VerifyItem::new("Psi limits", (cutoff_psi(200.0, 1.0) - 1.0).abs() + cutoff_psi(-200.0, 1.0), 1e-15),
        VerifyItem::new("Psi closed form at x = 1", (cutoff_psi(1.0, 0.3) - 2.0 / PI * (0.3_f64.sqrt() / 2.0).exp().atan()).abs(), 1e-15),
    ]
}

/// Gaussian wave packets sitting on the objects of [`pair`].
pub(crate) fn random_smooth(g: &Grid, rng: &mut ChaCha8Rng, amp: f64) -> Field {
    let modes: Vec<(f64, f64, f64)> = (0..6)
        .map(|i| {
            let center = if i % 2 == 0 { -20.0 } else { 20.0 };
            (rng.random_range(-1.0..1.0), rng.random_range(0.2..1.5), center + rng.random_range(-3.0..3.0))
        })
        .collect();
    Field::from_fn(g, 0.0, |x| {
        amp * modes.iter().map(|(a, k, c)| a * (-(x - c).powi(2) / 8.0).exp() * (k * x).cos()).sum::<f64>()
    })
    .expect("finite packet")
}

pub(crate) fn pair() -> Configuration {
    Configuration::new(vec![soliton(1.0, -20.0), breather(0.8, 2.0, 0.0, -20.0)]).expect("ordered pair")
}

fn taylor(g: &Grid) -> Result<Vec<VerifyItem>> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = pair();
    let cut = CutoffConfig::from_exact(0.15, &cfg, &[0.0])?;
    let mut worst = 0.0_f64;
    for _ in 0..5 {
        let p = eval_sum(&cfg, 0.0, g).add(&random_smooth(g, &mut rng, 0.3))?;
        let eps = random_smooth(g, &mut rng, 0.1);
        for j in 1..=3 {
            worst = worst.max(taylor_parts(&p, &eps, &cut, j)?.remainder.mass.abs());
        }
    }
    let mut out = vec![VerifyItem::new("mass expansion remainder", worst, 1e-12)];
    let p = eval_sum(&cfg, 0.0, g);
    let eps = random_smooth(g, &mut rng, 0.01);
    let rem: Vec<Triple> =
        [1.0, 0.5, 0.25].iter().map(|&s| taylor_parts(&p, &eps.scale(s), &cut, 2).map(|t| t.remainder)).collect::<Result<_>>()?;
    for (name, pick) in [("energy", (|t: &Triple| t.energy) as fn(&Triple) -> f64), ("F", |t: &Triple| t.f_second)] {
        let slope = (pick(&rem[0]).abs() / pick(&rem[2]).abs()).log2() / 2.0;
        out.push(VerifyItem::new(format!("{name} remainder slope = 3"), (slope - 3.0).abs(), 0.3));
    }
    Ok(out)
}

/// Flux identities along the closed-form breather, against central
/// differences in time of the closed form.
fn weighted_fluxes(g: &Grid) -> Result<Vec<VerifyItem>> {
    let p = BreatherParams::new(1.0, 1.0, 0.2, 0.5)?;
    let w = WeightJet::psi(g, 0.5, 0.0);
    let (t, h) = (0.1, 1e-4);
    let at = |s: f64| w.weighted(&eval_breather(&p, s, g));
    let (plus, minus) = (at(t + h)?, at(t - h)?);
    let rhs = appendix_rhs(&eval_breather(&p, t, g), &w)?;
    let rel = |fd: f64, r: f64| (fd - r).abs() / (1.0 + r.abs());
    let err = rel((plus.mass - minus.mass) / (2.0 * h), rhs.mass)
        .max(rel((plus.energy - minus.energy) / (2.0 * h), rhs.energy))
        .max(rel((plus.f_second - minus.f_second) / (2.0 * h), rhs.f_second));
    Ok(vec![VerifyItem::new("weighted M, E, F fluxes along a breather", err, 1e-6)])
}

/// Runs the whole suite on the standard grid (2048 points, length 100).
pub fn verify() -> Result<Vec<VerifyItem>> {
    let g = Grid::new(VERIFY_LENGTH, VERIFY_POINTS)?;
    let mut out = elliptic(&g)?;
    out.extend(anchors(&g)?);
    out.extend(psi_properties());
    out.extend(taylor(&g)?);
    out.extend(weighted_fluxes(&g)?);
    Ok(out)
}
