//! `mkdv-lab`: run scenarios, sweeps and the identity suite from the shell.
//!
//! Exit status: 0 when every check passed, 1 when a check failed, 2 on errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mkdv_core::harness::{self, sweep::Axis, Overrides, Scenario};
use mkdv_core::{LabError, Result};

#[derive(Parser)]
#[command(name = "mkdv-lab", version, about = "Numerical laboratory for mKdV soliton and breather stability")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write report.csv and summary.json.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a scenario for each value of one parameter.
    Sweep {
        scenario: PathBuf,
        /// amplitude, separation or resolution
        #[arg(long)]
        axis: Axis,
        /// Comma-separated, strictly increasing values.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        values: Vec<f64>,
        #[command(flatten)]
        common: Common,
        /// Maximum number of variants running at once.
        #[arg(long, env = "MKDV_LAB_THREADS")]
        threads: Option<usize>,
    },
    /// Check exact-solution identities, anchors and cutoff properties.
    Verify {
        /// Also write verify.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    length: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    /// Output directory (default: the scenario's, else ./mkdv-lab-out).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self, path: &Path) -> Result<(Scenario, PathBuf)> {
        let mut s = Scenario::from_json(&fs::read_to_string(path)?)?;
        Overrides { points: self.points, length: self.length, dt: self.dt, seed: self.seed }.apply(&mut s)?;
        let out = self.out.clone().or_else(|| s.outputs.dir.clone()).unwrap_or_else(|| PathBuf::from("mkdv-lab-out"));
        Ok((s, out))
    }
}

fn run(path: &Path, common: &Common) -> Result<bool> {
    let (s, out) = common.load(path)?;
    let output = harness::run(&s)?;
    harness::write_outputs(&output, &out, s.outputs.snapshots)?;
    let sm = &output.report.summary;
    println!(
        "{}: {} rows to t = {}, sup ||eps||_H2 = {:.6e} at t = {}, amplification {:.4}",
        if sm.name.is_empty() { "run" } else { &sm.name },
        sm.rows,
        sm.t_reached,
        sm.sup_eps_h2,
        sm.sup_time,
        sm.amplification
    );
    for f in &sm.failures {
        println!("FAILURE {} at t = {}: {}", f.stage, f.time, f.message);
    }
    for c in &sm.checks {
        println!("{} {:?}: {:.6e} vs {:.6e}", if c.passed { "PASS" } else { "FAIL" }, c.check, c.value, c.threshold);
    }
    println!("wrote {}", out.display());
    Ok(sm.passed)
}

fn sweep(path: &Path, axis: Axis, values: &[f64], common: &Common, threads: Option<usize>) -> Result<bool> {
    let (s, out) = common.load(path)?;
    let table = harness::sweep(&s, axis, values, Some(&out), threads)?;
    harness::write_sweep(&table, &out)?;
    for r in &table.rows {
        println!(
            "{axis} = {}: sup ||eps||_H2 = {:.6e}, max defect = {:.6e}, {}{}",
            r.value,
            r.sup_eps_h2,
            r.max_defect,
            if r.passed { "pass" } else { "fail" },
            r.error.as_deref().map(|e| format!(" ({e})")).unwrap_or_default()
        );
    }
    match table.slope {
        Some(slope) => println!("fitted slope: {slope:.4}"),
        None => println!("fitted slope: n/a"),
    }
    println!("wrote {}", out.display());
    Ok(table.rows.iter().all(|r| r.passed))
}

fn verify(out: Option<&Path>) -> Result<bool> {
    let items = harness::verify()?;
    for i in &items {
        println!("{} {}: {:.3e} (tolerance {:.1e})", if i.passed { "PASS" } else { "FAIL" }, i.name, i.value, i.tolerance);
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("verify.json"), serde_json::to_string_pretty(&items).map_err(LabError::from)? + "\n")?;
    }
    Ok(items.iter().all(|i| i.passed))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run { scenario, common } => run(scenario, common),
        Command::Sweep { scenario, axis, values, common, threads } => sweep(scenario, *axis, values, common, *threads),
        Command::Verify { out } => verify(out.as_deref()),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
