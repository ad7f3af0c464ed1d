//! Deterministic limit dynamics: the transport/fission equation on the
//! truncated orthant, its characteristics, and consistency checks.

pub mod checks;
pub mod coeffs;
pub mod flow;
pub mod grid;
pub mod scheme;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PdeError {
    #[error("total mass is zero, nonlocal drift is singular")]
    ZeroMass,
    #[error("time step {dt} violates the transport CFL limit, admissible dt = {admissible}")]
    CflViolation { dt: f64, admissible: f64 },
    #[error("mass {mass} fell below the configured floor {floor} at t = {t}")]
    MassUnderflow { t: f64, mass: f64, floor: f64 },
    #[error("moment identities require a conservative fission kernel")]
    NonConservativeKernel,
    #[error("moment reduction needs constant coefficients: {0}")]
    NonReducible(String),
}
