//! The run pipeline: integrate, modulate, evaluate functionals, report.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::error::{LabError, Result};
use crate::functionals::{default_sigma, functional_report, CutoffConfig, Triple};
use crate::grid::{Field, Grid};
use crate::integrator::{calibrate_dt, integrate_partial, write_snapshots, SolverConfig};
use crate::modulation::{parameter_vector, track_in_frame, ModulationTrack};

use super::scenario::{build_initial, CenterSource, Check, Scenario};

/// Default weight of `M_j` in the energy and `F` defects.
pub const DEFAULT_OMEGA: f64 = 0.1;

const CALIBRATION_PROBE_TIME: f64 = 1.0;
const CALIBRATION_TOL: f64 = 1e-8;
const CALIBRATION_HALVINGS: usize = 6;

/// Something that went wrong after the run started.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Failure {
    pub time: f64,
    pub stage: String,
    pub message: String,
}

/// One CSV row.
#[derive(Clone, Debug, Serialize)]
pub struct ReportRow {
    pub time: f64,
    pub eps_h2: f64,
    /// Modulated parameters in lab coordinates, two per object.
    pub params: Vec<f64>,
    /// `(M_j, E_j, F_j)`, `j = 1..=J`.
    pub localized: Vec<Triple>,
    pub lyapunov: Vec<f64>,
    pub quadratic_lyapunov: Vec<f64>,
    /// `M_j(t) - M_j(0)`, then the same for `E_j + omega M_j` and `F_j + omega M_j`.
    pub defects: Vec<[f64; 3]>,
    pub rates: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckOutcome {
    pub check: Check,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub name: String,
    pub points: usize,
    pub length: f64,
    pub dt: f64,
    pub snapshot_stride: usize,
    pub frame_velocity: f64,
    pub sigma: f64,
    pub theta: f64,
    pub omega: f64,
    pub amplitude: f64,
    pub separation: f64,
    pub t_final: f64,
    /// Time of the last reported row.
    pub t_reached: f64,
    pub rows: usize,
    pub sup_eps_h2: f64,
    pub sup_time: f64,
    /// `sup_eps_h2 / (a + exp(-theta D))`.
    pub amplification: f64,
    /// Least-squares slope of `eps_h2` over the final half of the reported times.
    pub growth_slope: f64,
    /// Largest positive part of each defect, per `j`.
    pub max_defects: Vec<[f64; 3]>,
    pub max_defect: f64,
    pub parameter_drift: f64,
    pub conservation_drift: Triple,
    pub failures: Vec<Failure>,
    pub checks: Vec<CheckOutcome>,
    pub passed: bool,
    pub elapsed_seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct StabilityReport {
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub summary: Summary,
}

/// Report plus the raw snapshots it was computed from (frame coordinates).
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: StabilityReport,
    pub snapshots: Vec<Field>,
}

/// Header row of the CSV time series.
pub fn csv_columns(s: &Scenario) -> Vec<String> {
    let mut cols = vec!["t".to_string(), "eps_h2".to_string()];
    let names: Vec<String> = s
        .objects
        .objects()
        .iter()
        .enumerate()
        .flat_map(|(k, o)| o.modulated_names().map(|n| format!("p{}_{n}", k + 1)))
        .collect();
    cols.extend(names.iter().cloned());
    let objects = s.objects.len();
    for j in 1..=objects {
        cols.extend(["M", "E", "F", "H", "Q"].iter().map(|q| format!("{q}_{j}")));
    }
    for j in 1..=objects {
        cols.extend(["dM", "dE", "dF"].iter().map(|q| format!("{q}_{j}")));
    }
    cols.extend(names.iter().map(|n| format!("{n}_rate")));
    cols
}

/// Solver settings actually used: frame velocity applied and, when asked,
/// `dt` halved until the soliton probe passes (stride doubled to match).
fn effective_solver(s: &Scenario, grid: &Grid, failures: &mut Vec<Failure>) -> Result<SolverConfig> {
    let mut cfg = s.solver.clone().with_frame_velocity(s.frame_velocity())?;
    if !s.calibrate_dt {
        return Ok(cfg);
    }
    match calibrate_dt(grid, cfg.dt, CALIBRATION_PROBE_TIME, CALIBRATION_TOL, CALIBRATION_HALVINGS) {
        Ok(dt) if dt < cfg.dt => {
            let factor = (cfg.dt / dt).round() as usize;
            log::info!("dt tightened from {} to {dt}", cfg.dt);
            cfg.dt = dt;
            cfg.snapshot_stride *= factor;
        }
        Ok(_) => {}
        Err(e) => failures.push(Failure { time: 0.0, stage: "calibration".into(), message: e.to_string() }),
    }
    Ok(cfg)
}

fn theta(s: &Scenario, sigma: f64) -> f64 {
    s.theta.unwrap_or_else(|| {
        let beta = s.objects.min_decay_rate().unwrap_or(1.0);
        (beta / 4.0).min(sigma.sqrt() / 16.0)
    })
}

fn failure_time(e: &LabError, fallback: f64) -> f64 {
    match e {
        LabError::Blowup { time, .. } => *time,
        _ => fallback,
    }
}

/// Runs a scenario. Errors are returned only for problems found before
/// stepping starts; later failures end up in `summary.failures` and the
/// report covers whatever was computed up to that point.
pub fn run(s: &Scenario) -> Result<RunOutput> {
    let started = Instant::now();
    s.validate()?;
    let grid = s.resolve_grid()?;
    let mut failures = Vec::new();
    let solver = effective_solver(s, &grid, &mut failures)?;
    let v = solver.frame_velocity;
    let u0 = build_initial(s, &grid)?;

    let (traj, err) = integrate_partial(&u0, &solver)?;
    if let Some(e) = err {
        let t = failure_time(&e, traj.last().time());
        failures.push(Failure { time: t, stage: "integration".into(), message: e.to_string() });
    }

    let tracked = track_in_frame(&traj.snapshots, &s.objects, s.modulation.tol, s.modulation.max_iter, v);
    if let Some((t, msg)) = &tracked.truncated {
        failures.push(Failure { time: *t, stage: "modulation".into(), message: msg.clone() });
    }

    let sigma = s.cutoff.sigma.unwrap_or_else(|| default_sigma(&s.objects));
    let omega = s.cutoff.omega.unwrap_or(DEFAULT_OMEGA);
    let rows = build_rows(s, &traj.snapshots, &tracked, sigma, omega, v, &mut failures);
    let drift = traj.max_relative_drift();

    let mut summary = Summary {
        name: s.name.clone(),
        points: grid.points(),
        length: grid.length(),
        dt: solver.effective_dt(),
        snapshot_stride: solver.snapshot_stride,
        frame_velocity: v,
        sigma,
        theta: theta(s, sigma),
        omega,
        amplitude: s.perturbation.amplitude,
        separation: s.separation,
        t_final: solver.t_final,
        t_reached: rows.last().map_or(0.0, |r| r.time),
        rows: rows.len(),
        sup_eps_h2: 0.0,
        sup_time: 0.0,
        amplification: 0.0,
        growth_slope: 0.0,
        max_defects: Vec::new(),
        max_defect: 0.0,
        parameter_drift: 0.0,
        conservation_drift: drift,
        failures,
        checks: Vec::new(),
        passed: false,
        elapsed_seconds: 0.0,
    };
    summarize(&mut summary, &rows);
    summary.checks = s.checks.iter().map(|c| evaluate(c, &summary)).collect();
    summary.passed = summary.failures.is_empty() && summary.checks.iter().all(|c| c.passed);
    summary.elapsed_seconds = started.elapsed().as_secs_f64();
    let report = StabilityReport { columns: csv_columns(s), rows, summary };
    Ok(RunOutput { report, snapshots: traj.snapshots })
}

fn build_rows(
    s: &Scenario,
    snapshots: &[Field],
    tracked: &ModulationTrack,
    sigma: f64,
    omega: f64,
    v: f64,
    failures: &mut Vec<Failure>,
) -> Vec<ReportRow> {
    let results = &tracked.results;
    if results.is_empty() {
        return Vec::new();
    }
    let times: Vec<f64> = results.iter().map(|r| r.time).collect();
    let centers: Vec<Vec<f64>> = match s.cutoff.centers {
        CenterSource::Fitted => results.iter().map(|r| r.params.centers(r.time)).collect(),
        CenterSource::Exact => times.iter().map(|&t| s.objects.centers(t)).collect(),
    };
    let cutoff = match CutoffConfig::from_centers(sigma, &times, &centers) {
        Ok(c) => c.with_frame_velocity(v),
        Err(e) => {
            failures.push(Failure { time: 0.0, stage: "cutoff".into(), message: e.to_string() });
            return Vec::new();
        }
    };
    let mut rows: Vec<ReportRow> = Vec::with_capacity(results.len());
    let mut origin: Vec<[f64; 3]> = Vec::new();
    for (i, r) in results.iter().enumerate() {
        let in_frame = r.params.translated(-v * r.time);
        let fr = match functional_report(&snapshots[i], &cutoff, &in_frame) {
            Ok(fr) => fr,
            Err(e) => {
                failures.push(Failure { time: r.time, stage: "functionals".into(), message: e.to_string() });
                break;
            }
        };
        let combined: Vec<[f64; 3]> = fr
            .localized
            .iter()
            .map(|l| [l.mass, l.energy + omega * l.mass, l.f_second + omega * l.mass])
            .collect();
        if origin.is_empty() {
            origin = combined.clone();
        }
        let defects = combined
            .iter()
            .zip(&origin)
            .map(|(now, then)| [now[0] - then[0], now[1] - then[1], now[2] - then[2]])
            .collect();
        rows.push(ReportRow {
            time: r.time,
            eps_h2: r.h2_of_epsilon,
            params: parameter_vector(&r.params),
            localized: fr.localized,
            lyapunov: fr.lyapunov,
            quadratic_lyapunov: fr.quadratic_lyapunov,
            defects,
            rates: tracked.parameter_rates[i].clone(),
        });
    }
    rows
}

/// Least-squares slope of `y` against `x`; zero for fewer than two points.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n < 2 {
        return 0.0;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for i in 0..n {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

fn summarize(s: &mut Summary, rows: &[ReportRow]) {
    for r in rows {
        if r.eps_h2 > s.sup_eps_h2 || s.sup_eps_h2.is_nan() {
            s.sup_eps_h2 = r.eps_h2;
            s.sup_time = r.time;
        }
    }
    s.amplification = s.sup_eps_h2 / (s.amplitude + (-s.theta * s.separation).exp());
    let half = s.t_reached / 2.0;
    let (t, e): (Vec<f64>, Vec<f64>) = rows.iter().filter(|r| r.time >= half).map(|r| (r.time, r.eps_h2)).unzip();
    s.growth_slope = ls_slope(&t, &e);
    let objects = rows.first().map_or(0, |r| r.defects.len());
    s.max_defects = vec![[0.0; 3]; objects];
    for r in rows {
        for (m, d) in s.max_defects.iter_mut().zip(&r.defects) {
            for q in 0..3 {
                m[q] = m[q].max(d[q]);
            }
        }
    }
    s.max_defect = s.max_defects.iter().flatten().fold(0.0, |a, &b| a.max(b));
    if let Some(first) = rows.first() {
        s.parameter_drift = rows
            .iter()
            .flat_map(|r| r.params.iter().zip(&first.params).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
    }
}

fn evaluate(check: &Check, s: &Summary) -> CheckOutcome {
    let (value, threshold) = match *check {
        Check::SupEpsH2 { max } => (s.sup_eps_h2, max),
        Check::SupEpsH2OverAmplitude { multiple } => (s.sup_eps_h2, multiple * s.amplitude),
        Check::NoGrowth { fraction } => (s.growth_slope * (s.t_reached / 2.0), fraction * s.sup_eps_h2),
        Check::ParameterDrift { max } => (s.parameter_drift, max),
        Check::MonotonicityDefect { max } => (s.max_defect, max),
        Check::ConservationDrift { max } => (s.conservation_drift.max_abs(), max),
        Check::TrackComplete => {
            let missing = if s.failures.is_empty() && (s.t_reached - s.t_final).abs() <= 1e-9 * s.t_final.max(1.0) {
                0.0
            } else {
                1.0
            };
            (missing, 0.0)
        }
    };
    // NaN never passes.
    let passed = value <= threshold;
    CheckOutcome { check: check.clone(), value, threshold, passed }
}

/// Writes the report rows as CSV with the fixed column order of [`csv_columns`].
pub fn write_csv<W: Write>(report: &StabilityReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&report.columns)?;
    for r in &report.rows {
        let mut rec: Vec<String> = Vec::with_capacity(report.columns.len());
        rec.push(r.time.to_string());
        rec.push(r.eps_h2.to_string());
        rec.extend(r.params.iter().map(f64::to_string));
        for j in 0..r.localized.len() {
            let l = r.localized[j];
            for x in [l.mass, l.energy, l.f_second, r.lyapunov[j], r.quadratic_lyapunov[j]] {
                rec.push(x.to_string());
            }
        }
        for d in &r.defects {
            rec.extend(d.iter().map(f64::to_string));
        }
        rec.extend(r.rates.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

const LOCK_NAME: &str = ".mkdv-lab.lock";

/// Exclusive claim on an output directory, released on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_NAME);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                Err(LabError::Scenario(format!("output directory {} is in use", dir.display())))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub const CSV_NAME: &str = "report.csv";
pub const SUMMARY_NAME: &str = "summary.json";
pub const SNAPSHOTS_NAME: &str = "snapshots.bin";

/// Writes `report.csv`, `summary.json` and, if asked, `snapshots.bin`.
pub fn write_outputs(out: &RunOutput, dir: &Path, snapshots: bool) -> Result<()> {
    let _lock = DirLock::acquire(dir)?;
    write_csv(&out.report, BufWriter::new(File::create(dir.join(CSV_NAME))?))?;
    let mut summary = BufWriter::new(File::create(dir.join(SUMMARY_NAME))?);
    serde_json::to_writer_pretty(&mut summary, &out.report.summary)?;
    summary.write_all(b"\n")?;
    summary.flush()?;
    if snapshots {
        write_snapshots(&dir.join(SNAPSHOTS_NAME), &out.snapshots)?;
    }
    Ok(())
}
