//! One-parameter sweeps over a base scenario.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::exact::Configuration;

use super::run::{ls_slope, run, write_outputs};
use super::scenario::Scenario;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Perturbation size `a`.
    Amplitude,
    /// Separation `D`; objects are re-placed `2 D` apart, symmetric about 0.
    Separation,
    /// Grid points at the base scenario's box length.
    Resolution,
}

impl FromStr for Axis {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "amplitude" => Ok(Axis::Amplitude),
            "separation" => Ok(Axis::Separation),
            "resolution" => Ok(Axis::Resolution),
            other => Err(LabError::Scenario(format!("unknown sweep axis {other:?}"))),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Amplitude => "amplitude",
            Axis::Separation => "separation",
            Axis::Resolution => "resolution",
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub sup_eps_h2: f64,
    pub amplification: f64,
    pub max_defect: f64,
    /// Largest positive part of each defect, per `j`.
    pub max_defects: Vec<[f64; 3]>,
    pub parameter_drift: f64,
    pub passed: bool,
    /// Set when the variant could not run or recorded failures.
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepTable {
    pub axis: Axis,
    pub rows: Vec<SweepRow>,
    /// Log-log slope of `sup_eps_h2` for the amplitude and resolution axes,
    /// log-linear slope of `max_defect` against `D` for the separation axis.
    pub slope: Option<f64>,
}

/// Places the objects of `cfg` `2 d` apart, centered on 0, keeping their order.
pub fn respace(cfg: &Configuration, d: f64) -> Result<Configuration> {
    let n = cfg.len() as f64;
    let objects = cfg
        .objects()
        .iter()
        .enumerate()
        .map(|(k, o)| {
            let target = (k as f64 - (n - 1.0) / 2.0) * 2.0 * d;
            o.translated(target - o.center(0.0))
        })
        .collect();
    Configuration::new(objects)
}

/// The base scenario with one axis set to `value`.
pub fn variant(base: &Scenario, axis: Axis, value: f64) -> Result<Scenario> {
    let mut s = base.clone();
    match axis {
        Axis::Amplitude => s.perturbation.amplitude = value,
        Axis::Separation => {
            s.separation = value;
            s.objects = respace(&base.objects, value)?;
        }
        Axis::Resolution => {
            if !(value >= 2.0 && value.fract() == 0.0) {
                return Err(LabError::Scenario(format!("resolution must be a point count, got {value}")));
            }
            let length = base.resolve_grid()?.length();
            s.grid.points = Some(value as usize);
            s.grid.length = Some(length);
        }
    }
    s.name = format!("{}-{axis}-{value}", base.name);
    s.outputs.dir = None;
    s.validate()?;
    Ok(s)
}

fn run_variant(base: &Scenario, axis: Axis, value: f64, out: Option<&Path>) -> SweepRow {
    let failed = |msg: String| SweepRow {
        value,
        sup_eps_h2: f64::NAN,
        amplification: f64::NAN,
        max_defect: f64::NAN,
        max_defects: Vec::new(),
        parameter_drift: f64::NAN,
        passed: false,
        error: Some(msg),
    };
    let s = match variant(base, axis, value) {
        Ok(s) => s,
        Err(e) => return failed(e.to_string()),
    };
    let output = match run(&s) {
        Ok(o) => o,
        Err(e) => return failed(e.to_string()),
    };
    if let Some(dir) = out {
        let sub = dir.join(format!("{axis}_{value}"));
        if let Err(e) = write_outputs(&output, &sub, base.outputs.snapshots) {
            return failed(e.to_string());
        }
    }
    let sm = &output.report.summary;
    let error = (!sm.failures.is_empty()).then(|| {
        sm.failures.iter().map(|f| format!("{} at t = {}: {}", f.stage, f.time, f.message)).collect::<Vec<_>>().join("; ")
    });
    SweepRow {
        value,
        sup_eps_h2: sm.sup_eps_h2,
        amplification: sm.amplification,
        max_defect: sm.max_defect,
        max_defects: sm.max_defects.clone(),
        parameter_drift: sm.parameter_drift,
        passed: sm.passed,
        error,
    }
}

fn fit_slope(axis: Axis, rows: &[SweepRow]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.error.is_none())
        .filter_map(|r| {
            let (x, y) = match axis {
                Axis::Amplitude | Axis::Resolution => (r.value.ln(), r.sup_eps_h2.ln()),
                Axis::Separation => (r.value, r.max_defect.ln()),
            };
            (x.is_finite() && y.is_finite()).then_some((x, y))
        })
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    Some(ls_slope(&x, &y))
}

/// Runs every variant, at most `threads` at a time (all cores when `None`).
/// Per-variant failures are recorded in the table and do not stop the sweep.
pub fn sweep(base: &Scenario, axis: Axis, values: &[f64], out: Option<&Path>, threads: Option<usize>) -> Result<SweepTable> {
    if values.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(LabError::Scenario("sweep values must be strictly increasing".into()));
    }
    base.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| LabError::Scenario(format!("thread pool: {e}")))?;
    let rows: Vec<SweepRow> = pool.install(|| values.par_iter().map(|&v| run_variant(base, axis, v, out)).collect());
    let slope = fit_slope(axis, &rows);
    Ok(SweepTable { axis, rows, slope })
}

pub fn write_sweep_csv<W: Write>(table: &SweepTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([table.axis.to_string().as_str(), "sup_eps_h2", "amplification", "max_defect", "parameter_drift", "passed", "error"])?;
    for r in &table.rows {
        w.write_record([
            r.value.to_string(),
            r.sup_eps_h2.to_string(),
            r.amplification.to_string(),
            r.max_defect.to_string(),
            r.parameter_drift.to_string(),
            r.passed.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `sweep.csv` and `sweep.json` into `dir`.
pub fn write_sweep(table: &SweepTable, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_sweep_csv(table, BufWriter::new(File::create(dir.join("sweep.csv"))?))?;
    let mut json = BufWriter::new(File::create(dir.join("sweep.json"))?);
    serde_json::to_writer_pretty(&mut json, table)?;
    json.write_all(b"\n")?;
    json.flush()?;
    Ok(())
}
