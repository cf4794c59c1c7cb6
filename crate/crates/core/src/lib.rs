//! Numerical laboratory for the modified Korteweg-de Vries equation
//! `u_t + (u_xx + u^3)_x = 0`.
//!
//! * [`grid`]: periodic grid, spectral derivatives, quadrature, H^2 norm
//! * [`exact`]: closed-form solitons and breathers and their parameter derivatives
//! * [`functionals`]: conserved quantities, localized versions, Lyapunov combinations
//! * [`integrator`]: exponential Runge-Kutta pseudo-spectral solver
//! * [`modulation`]: orthogonality-based parameter fitting and tracking
//! * [`harness`]: scenarios, runs, sweeps and reports

pub mod error;
pub mod exact;
pub mod functionals;
pub mod grid;
pub mod harness;
pub mod integrator;
pub mod modulation;

pub use error::{LabError, Result};
pub use exact::{
    center, elliptic_residual, eval_breather, eval_object, eval_soliton, eval_sum, param_gradient,
    soliton_profile, velocity, BreatherParams, Configuration, ObjectParams, Sign, SolitonParams,
};
pub use grid::{h2_norm, h2_norm_sq, quadrature, spectral_derivative, Field, Grid};
pub use integrator::{integrate, step, Scheme, SolverConfig, Trajectory};
pub use modulation::{fit, ortho_extended_residuals, track, track_in_frame, ModulationResult, ModulationTrack};
