//! Group-structured population dynamics.
//!
//! Individuals of finitely many types live in discrete groups.
//! Individuals are born, die and migrate between groups; whole groups
//! split (fission) or die out (extinction). This crate provides
//!
//! - an exact event-driven simulator of the resulting Markov process,
//!   with full event counters and martingale-compensator diagnostics,
//! - the scaling machinery that turns populations into empirical
//!   measures and step densities on the positive orthant,
//! - a solver for the deterministic transport/fission equation that
//!   arises as the many-groups limit, validated against its weak and
//!   mild formulations,
//! - bounded-Lipschitz and pairing metrics for comparing the two, and
//! - a scenario harness that runs replica batteries and convergence
//!   studies from declarative config files.

pub mod config;
pub mod diagnose;
pub mod fission;
pub mod init;
pub mod metrics;
pub mod pde;
pub mod population;
pub mod rates;
pub mod report;
pub mod runner;
pub mod scale;
pub mod sim;
pub mod study;
