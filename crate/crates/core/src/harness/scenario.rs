//! Scenario files and everything derived from them before time stepping:
//! frame, grid, step size and initial data.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::exact::{eval_sum, Configuration, ObjectParams};
use crate::grid::{h2_norm, Field, Grid};
use crate::integrator::SolverConfig;
use crate::modulation::{DEFAULT_MAX_ITER, DEFAULT_TOL};

pub const SCHEMA_VERSION: u32 = 1;

/// Grid spacing used when the scenario does not fix one: 100 / 2048.
pub const DEFAULT_SPACING: f64 = 100.0 / 2048.0;

/// Tails must fall below this level at the box edges.
pub const TAIL_LEVEL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    #[default]
    None,
    RandomH2,
    Directed,
}

/// Closed-form perturbation profile `exp(-(x - center)^2 / (2 width^2)) cos(wavenumber (x - center))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub center: f64,
    pub width: f64,
    #[serde(default)]
    pub wavenumber: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    #[serde(default)]
    pub kind: PerturbationKind,
    /// H^2 norm of the perturbation.
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub bump: Option<Bump>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default)]
    pub points: Option<usize>,
    #[serde(default)]
    pub length: Option<f64>,
    /// Target spacing for automatic sizing.
    #[serde(default)]
    pub spacing: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterSource {
    #[default]
    Fitted,
    Exact,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutoffOverrides {
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub centers: CenterSource,
    /// Weight of `M_j` added to `E_j` and `F_j` in the monotonicity defects.
    #[serde(default)]
    pub omega: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulationSettings {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

fn default_max_iter() -> usize {
    DEFAULT_MAX_ITER
}

impl Default for ModulationSettings {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameName {
    /// Move with the mean of the slowest and fastest object velocities.
    Auto,
    Lab,
}

/// Computational frame: `"auto"`, `"lab"` or an explicit velocity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Frame {
    Named(FrameName),
    Velocity(f64),
}

impl Default for Frame {
    fn default() -> Self {
        Frame::Named(FrameName::Auto)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Also dump every snapshot in the binary format.
    #[serde(default)]
    pub snapshots: bool,
}

/// Acceptance checks evaluated on a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case", deny_unknown_fields)]
pub enum Check {
    /// `sup_t ||eps||_{H^2} <= max`.
    SupEpsH2 { max: f64 },
    /// `sup_t ||eps||_{H^2} <= multiple * a`.
    SupEpsH2OverAmplitude { multiple: f64 },
    /// Over the final half of the run, the least-squares slope of
    /// `||eps||_{H^2}` times the half-length stays below `fraction` of the sup.
    NoGrowth { fraction: f64 },
    /// Every modulated parameter stays within `max` of its initial value.
    ParameterDrift { max: f64 },
    /// Positive parts of all monotonicity defects stay below `max`.
    MonotonicityDefect { max: f64 },
    /// Relative drift of M, E and F stays below `max`.
    ConservationDrift { max: f64 },
    /// Modulation converged at every snapshot.
    TrackComplete,
}

/// A complete experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub objects: Configuration,
    /// Separation `D`: initial centers must be at least `2 D` apart.
    pub separation: f64,
    #[serde(default)]
    pub perturbation: Perturbation,
    pub solver: SolverConfig,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub frame: Frame,
    /// Halve `dt` until the soliton accuracy probe passes on the run's grid.
    #[serde(default = "enabled")]
    pub calibrate_dt: bool,
    #[serde(default)]
    pub cutoff: CutoffOverrides,
    #[serde(default)]
    pub modulation: ModulationSettings,
    /// Rate in the reported envelope `a + exp(-theta D)`.
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default)]
    pub checks: Vec<Check>,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

fn enabled() -> bool {
    true
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(LabError::Scenario(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("unsupported schema version {}", self.schema_version));
        }
        if !(self.separation.is_finite() && self.separation > 0.0) {
            return bad(format!("separation must be positive, got {}", self.separation));
        }
        let centers = self.objects.centers(0.0);
        for (i, w) in centers.windows(2).enumerate() {
            if w[1] - w[0] < 2.0 * self.separation * (1.0 - 1e-12) {
                return bad(format!(
                    "objects {} and {} start {:.4} apart, less than 2D = {}",
                    i + 1,
                    i + 2,
                    w[1] - w[0],
                    2.0 * self.separation
                ));
            }
        }
        if self.objects.len() >= 2 && self.objects.objects()[1].velocity() <= 0.0 {
            return bad("the second object must move to the right (v2 > 0)".into());
        }
        let p = &self.perturbation;
        if !(p.amplitude.is_finite() && p.amplitude >= 0.0) {
            return bad(format!("perturbation amplitude must be non-negative, got {}", p.amplitude));
        }
        if p.kind == PerturbationKind::Directed {
            match &p.bump {
                Some(b) if b.width > 0.0 && b.center.is_finite() && b.wavenumber.is_finite() => {}
                _ => return bad("directed perturbation needs a bump with positive width".into()),
            }
        }
        self.solver.validate()?;
        if self.solver.t_final <= 0.0 {
            return bad("runs integrate forward in time".into());
        }
        if let Some(sigma) = self.cutoff.sigma {
            if !(sigma > 0.0) {
                return bad(format!("sigma must be positive, got {sigma}"));
            }
        }
        if !(self.modulation.tol > 0.0) {
            return bad("modulation tolerance must be positive".into());
        }
        Ok(())
    }

    /// Velocity of the computational frame.
    pub fn frame_velocity(&self) -> f64 {
        match self.frame {
            Frame::Velocity(v) => v,
            Frame::Named(FrameName::Lab) => 0.0,
            Frame::Named(FrameName::Auto) => {
                let v: Vec<f64> = self.objects.objects().iter().map(ObjectParams::velocity).collect();
                match (v.first(), v.last()) {
                    (Some(lo), Some(hi)) => 0.5 * (lo + hi),
                    _ => 0.0,
                }
            }
        }
    }

    /// Half-width the box needs so that every object, over the whole run and
    /// in the computational frame, keeps its tails below [`TAIL_LEVEL`].
    pub fn required_half_length(&self) -> f64 {
        let v = self.frame_velocity();
        let t = self.solver.t_final;
        let beta = self.objects.min_decay_rate().unwrap_or(1.0);
        let margin = (1.0 / TAIL_LEVEL).ln() / beta;
        let mut half = margin;
        for o in self.objects.objects() {
            for s in [0.0, t] {
                half = half.max((o.center(s) - v * s).abs() + margin);
            }
        }
        if let (PerturbationKind::Directed, Some(b)) = (self.perturbation.kind, &self.perturbation.bump) {
            half = half.max(b.center.abs() + 8.0 * b.width);
        }
        half
    }

    /// Grid from the scenario, sized automatically where not fixed.
    pub fn resolve_grid(&self) -> Result<Grid> {
        let spacing = self.grid.spacing.unwrap_or(DEFAULT_SPACING);
        if !(spacing > 0.0) {
            return Err(LabError::Scenario(format!("spacing must be positive, got {spacing}")));
        }
        let needed = 2.0 * self.required_half_length();
        let grid = match (self.grid.points, self.grid.length) {
            (Some(n), Some(l)) => Grid::new(l, n)?,
            (Some(n), None) => Grid::new(needed.max(n as f64 * spacing), n)?,
            (None, Some(l)) => Grid::new(l, next_pow2(l / spacing))?,
            (None, None) => {
                let n = next_pow2(needed / spacing);
                Grid::new(n as f64 * spacing, n)?
            }
        };
        if grid.length() < needed * (1.0 - 1e-12) {
            log::warn!(
                "box length {} is below the {:.1} needed to keep tails under {TAIL_LEVEL:e}",
                grid.length(),
                needed
            );
        }
        Ok(grid)
    }
}

/// Command-line style overrides applied on top of a scenario file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub points: Option<usize>,
    pub length: Option<f64>,
    /// New step size; the snapshot stride is rescaled to keep the snapshot interval.
    pub dt: Option<f64>,
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, s: &mut Scenario) -> Result<()> {
        if let Some(n) = self.points {
            s.grid.points = Some(n);
        }
        if let Some(l) = self.length {
            s.grid.length = Some(l);
        }
        if let Some(dt) = self.dt {
            let interval = s.solver.dt * s.solver.snapshot_stride as f64;
            s.solver.dt = dt;
            s.solver.snapshot_stride = ((interval / dt).round() as usize).max(1);
        }
        if let Some(seed) = self.seed {
            s.perturbation.seed = seed;
        }
        s.validate()
    }
}

fn next_pow2(x: f64) -> usize {
    (x.ceil().max(16.0) as usize).next_power_of_two()
}

/// Band-limited noise with independent normal coefficients on `1 <= |k| <= N/8`.
fn random_band_limited(g: &Grid, rng: &mut ChaCha8Rng) -> Field {
    let n = g.points();
    let top = n / 8;
    let mut spectrum = vec![Complex64::new(0.0, 0.0); n];
    for j in 1..=top {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        spectrum[j] = Complex64::new(re, im);
        spectrum[n - j] = spectrum[j].conj();
    }
    Field::from_parts(g, g.inverse(&spectrum), 0.0)
}

fn normalized(f: Field, a: f64) -> Result<Option<Field>> {
    let norm = h2_norm(&f)?;
    if !(norm > 0.0 && norm.is_finite()) {
        return Ok(None);
    }
    Ok(Some(f.scale(a / norm)))
}

/// The perturbation added to the sum at `t = 0`, with H^2 norm `amplitude`.
pub fn build_perturbation(p: &Perturbation, g: &Grid) -> Result<Field> {
    if p.amplitude == 0.0 || p.kind == PerturbationKind::None {
        return Ok(Field::zeros(g, 0.0));
    }
    match p.kind {
        PerturbationKind::None => unreachable!(),
        PerturbationKind::RandomH2 => {
            for seed in [p.seed, p.seed.wrapping_add(1)] {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                if let Some(f) = normalized(random_band_limited(g, &mut rng), p.amplitude)? {
                    return Ok(f);
                }
                log::warn!("perturbation draw with seed {seed} vanished; reseeding");
            }
            Err(LabError::Scenario("could not draw a nonzero perturbation".into()))
        }
        PerturbationKind::Directed => {
            let b = p.bump.as_ref().ok_or_else(|| LabError::Scenario("directed perturbation without bump".into()))?;
            let f = Field::from_fn(g, 0.0, |x| {
                let y = x - b.center;
                (-y * y / (2.0 * b.width * b.width)).exp() * (b.wavenumber * y).cos()
            })?;
            normalized(f, p.amplitude)?.ok_or_else(|| LabError::Scenario("bump vanishes on the grid".into()))
        }
    }
}

/// `u(0) = P(0) + a w` with `||w||_{H^2} = 1`.
pub fn build_initial(s: &Scenario, g: &Grid) -> Result<Field> {
    let p = eval_sum(&s.objects, 0.0, g);
    p.add(&build_perturbation(&s.perturbation, g)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::Sign;
    use crate::grid::h2_norm_sq;

    pub(crate) fn pair_scenario() -> Scenario {
        Scenario::from_json(
            r#"{
                "objects": [
                    {"kind": "soliton", "c": 1.0, "kappa": 1, "x0": -20.0},
                    {"kind": "breather", "alpha": 0.8, "beta": 2.0, "x1": 0.0, "x2": -20.0}
                ],
                "separation": 20.0,
                "perturbation": {"kind": "random_h2", "amplitude": 1e-3, "seed": 7},
                "solver": {"dt": 0.001, "t_final": 1.0, "snapshot_stride": 100}
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn parses_with_defaults() {
        let s = pair_scenario();
        assert_eq!(s.schema_version, SCHEMA_VERSION);
        assert_eq!(s.frame, Frame::Named(FrameName::Auto));
        assert_eq!(s.modulation.tol, DEFAULT_TOL);
        assert!(s.checks.is_empty());
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(Scenario::from_json(&text).unwrap(), s);
    }

    #[test]
    fn frames_and_checks_parse() {
        let mut v: serde_json::Value = serde_json::to_value(pair_scenario()).unwrap();
        v["frame"] = serde_json::json!(1.5);
        v["checks"] = serde_json::json!([{"check": "sup_eps_h2_over_amplitude", "multiple": 20.0}, {"check": "track_complete"}]);
        let s: Scenario = serde_json::from_value(v.clone()).unwrap();
        assert_eq!(s.frame_velocity(), 1.5);
        assert_eq!(s.checks[0], Check::SupEpsH2OverAmplitude { multiple: 20.0 });
        v["frame"] = serde_json::json!("lab");
        let s: Scenario = serde_json::from_value(v).unwrap();
        assert_eq!(s.frame_velocity(), 0.0);
    }

    #[test]
    fn rejects_bad_scenarios() {
        let base = serde_json::to_value(pair_scenario()).unwrap();
        let with = |path: &str, value: serde_json::Value| {
            let mut v = base.clone();
            *v.pointer_mut(path).unwrap() = value;
            Scenario::from_json(&v.to_string())
        };
        assert!(with("/separation", serde_json::json!(25.0)).is_err());
        assert!(with("/schema_version", serde_json::json!(2)).is_err());
        assert!(with("/perturbation/amplitude", serde_json::json!(-1.0)).is_err());
        assert!(with("/perturbation/kind", serde_json::json!("directed")).is_err());
        // Soliton with c = 0.1 moves slower than the breather but v2 must be positive.
        let slow = serde_json::json!([
            {"kind": "breather", "alpha": 1.0, "beta": 1.0, "x1": 0.0, "x2": 20.0},
            {"kind": "soliton", "c": 0.1, "kappa": 1, "x0": 20.0}
        ]);
        assert!(with("/objects", slow.clone()).is_ok());
        let negative = serde_json::json!([
            {"kind": "breather", "alpha": 1.0, "beta": 0.5, "x1": 0.0, "x2": 20.0},
            {"kind": "breather", "alpha": 0.5, "beta": 1.0, "x1": 0.0, "x2": -20.0}
        ]);
        // Velocities -2.75 and 0.25: v2 > 0 holds.
        assert!(with("/objects", negative).is_ok());
        let stalled = serde_json::json!([
            {"kind": "breather", "alpha": 1.0, "beta": 0.5, "x1": 0.0, "x2": 20.0},
            {"kind": "breather", "alpha": 1.0, "beta": 1.0, "x1": 0.0, "x2": -20.0}
        ]);
        assert!(with("/objects", stalled).is_err());
        assert!(serde_json::from_str::<Scenario>(r#"{"objects": [], "separation": 1, "solver": {"dt": 0.1, "t_final": 1}, "bogus": 1}"#).is_err());
    }

    #[test]
    fn auto_grid_covers_the_run() {
        let s = pair_scenario();
        let g = s.resolve_grid().unwrap();
        assert!(g.points().is_power_of_two());
        assert!((g.spacing() - DEFAULT_SPACING).abs() < 1e-15);
        assert!(g.length() >= 2.0 * s.required_half_length());
        let mut fixed = s.clone();
        fixed.grid = GridSpec { points: Some(512), length: Some(80.0), spacing: None };
        let g = fixed.resolve_grid().unwrap();
        assert_eq!((g.points(), g.length()), (512, 80.0));
    }

    #[test]
    fn perturbation_is_normalized_and_seeded() {
        let s = pair_scenario();
        let g = Grid::new(100.0, 1024).unwrap();
        let u0 = build_initial(&s, &g).unwrap();
        let w = u0.sub(&eval_sum(&s.objects, 0.0, &g)).unwrap();
        let a = s.perturbation.amplitude;
        assert!((h2_norm_sq(&w).unwrap() - a * a).abs() < 1e-12 * a * a);
        let direct = build_perturbation(&s.perturbation, &g).unwrap();
        assert!((h2_norm_sq(&direct).unwrap() - a * a).abs() <= 1e-14 * a * a);

        let other = Perturbation { seed: 8, ..s.perturbation.clone() };
        let w2 = build_perturbation(&other, &g).unwrap();
        assert!(w2.sub(&direct).unwrap().max_abs() > 1e-6 * direct.max_abs());
        assert!((h2_norm(&w2).unwrap() - a).abs() < 1e-12 * a);
        let again = build_perturbation(&s.perturbation, &g).unwrap();
        assert_eq!(again.values(), direct.values());
    }

    #[test]
    fn zero_amplitude_is_the_exact_sum() {
        let mut s = pair_scenario();
        s.perturbation.amplitude = 0.0;
        let g = Grid::new(100.0, 512).unwrap();
        assert_eq!(build_initial(&s, &g).unwrap().values(), eval_sum(&s.objects, 0.0, &g).values());
    }

    #[test]
    fn directed_bump() {
        let g = Grid::new(100.0, 1024).unwrap();
        let p = Perturbation {
            kind: PerturbationKind::Directed,
            amplitude: 1e-2,
            seed: 0,
            bump: Some(Bump { center: 5.0, width: 2.0, wavenumber: 1.0 }),
        };
        let w = build_perturbation(&p, &g).unwrap();
        assert!((h2_norm(&w).unwrap() - 1e-2).abs() < 1e-15);
        let peak = g.nodes().iter().zip(w.values()).max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).unwrap().0.to_owned();
        assert!((peak - 5.0).abs() < 0.2);
    }

    #[test]
    fn overrides_keep_the_snapshot_interval() {
        let mut s = pair_scenario();
        let o = Overrides { points: Some(1024), length: None, dt: Some(2.5e-4), seed: Some(99) };
        o.apply(&mut s).unwrap();
        assert_eq!(s.solver.snapshot_stride, 400);
        assert_eq!(s.perturbation.seed, 99);
        assert_eq!(s.grid.points, Some(1024));
        assert!(Overrides { dt: Some(-1.0), ..Default::default() }.apply(&mut s).is_err());
    }

    #[test]
    fn single_soliton_frame_follows_it() {
        let s = Scenario {
            objects: Configuration::new(vec![ObjectParams::soliton(2.0, Sign::Plus, 0.0).unwrap()]).unwrap(),
            ..pair_scenario()
        };
        assert_eq!(s.frame_velocity(), 2.0);
    }
}
