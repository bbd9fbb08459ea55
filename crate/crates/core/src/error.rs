//! Error types shared across the simulation library.

use thiserror::Error;

/// Unified error type for model construction, configuration, and solvers.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum SimError {
    /// A density was handed to the fundamental diagram outside `[0, rho_m]`.
    #[error("density {rho} veh/m outside [0, {rho_m}] veh/m")]
    DensityOutOfRange { rho: f64, rho_m: f64 },

    /// A physical parameter that must be strictly positive is not.
    #[error("parameter {name} must be strictly positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },

    /// A setpoint violates one of the model-validity inequalities.
    #[error("infeasible setpoint: violated `{constraint}`")]
    InfeasibleSetpoint { constraint: &'static str },

    /// A spatial position fell outside the freeway segment.
    #[error("position {x} m outside segment [0, {length} m]")]
    PositionOutOfRange { x: f64, length: f64 },

    /// Scenario/configuration problem (bad key, bad value, broken invariant).
    #[error("configuration error: {0}")]
    Config(String),

    /// A boundary-input history was asked for a time older than it retains.
    #[error("input history underflow: requested t = {requested} s, oldest retained t = {oldest} s")]
    HistoryUnderflow { requested: f64, oldest: f64 },

    /// The finite-volume sub-stepping could not satisfy the CFL bound.
    #[error("CFL condition unsatisfiable: required dt {required_dt} s below floor {floor_dt} s")]
    CflViolation { required_dt: f64, floor_dt: f64 },

    /// A solver produced a density outside the physically admissible band.
    #[error("solver blow-up: density {rho} veh/m outside [0, {rho_m}] at x = {x} m, t = {t} s")]
    SolverBlowup { rho: f64, rho_m: f64, x: f64, t: f64 },

    /// Input data too short or otherwise unusable for a diagnostic routine.
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, SimError>;
