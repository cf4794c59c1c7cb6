//! Scenario-driven experiments: build initial data, integrate, modulate,
//! evaluate functionals and write reports.

pub mod run;
pub mod scenario;
pub mod sweep;
pub mod verify;

pub use run::{run, write_csv, write_outputs, CheckOutcome, Failure, ReportRow, RunOutput, StabilityReport, Summary};
pub use scenario::{build_initial, build_perturbation, Check, Frame, Overrides, Perturbation, PerturbationKind, Scenario};
pub use sweep::{sweep, write_sweep, Axis, SweepRow, SweepTable};
pub use verify::{verify, VerifyItem};
