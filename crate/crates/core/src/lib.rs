//! Simulation and boundary control of a moving traffic shockwave.
//!
//! A freeway segment carries light traffic upstream and congested traffic
//! downstream of a density discontinuity that drifts with the flux imbalance
//! across it. This crate models that coupled PDE–ODE system (two transport
//! equations on moving subdomains plus the front ODE), implements bilateral
//! predictor-backstepping boundary controllers that park the front at a
//! setpoint, and provides the diagnostics and scenario machinery used to
//! verify closed-loop stabilization numerically.
//!
//! Layout:
//! - [`fundamental`]: Greenshields diagram, setpoints, linearization constants
//! - [`field`] / [`history`]: sampled-field and input-history primitives
//! - [`plant`]: the two plant backends (characteristics, finite volume)
//! - [`control`]: delays, backstepping laws, boundary application
//! - [`transform`]: forward/inverse backstepping transforms and residuals
//! - [`diagnostics`]: Lyapunov functional, H1 norms, decay fits
//! - [`scenario`] / [`runner`]: configuration, orchestration, CSV output
//! - [`validate`]: the cross-module property suite behind `validate`

pub mod control;
pub mod diagnostics;
pub mod error;
pub mod field;
pub mod fundamental;
pub mod history;
pub mod plant;
pub mod runner;
pub mod scenario;
pub mod transform;
pub mod validate;

pub use error::{Result, SimError};
