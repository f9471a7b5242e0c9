//! Error type shared by all modules.

use alloc::string::String;
use core::fmt;

/// Everything that can go wrong while building grids, running solvers or
/// evaluating the stability conditions.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Invalid domain geometry (non-nested rectangles, x0 inside the
    /// closure, node off the boundary, ...).
    Geometry(String),
    /// Grid spacing incompatible with the requested rectangles.
    Discretization(String),
    /// Invalid configuration value (unknown test id, parameter out of range).
    Config(String),
    /// Mismatched array or trace dimensions.
    Shape(String),
    /// Explicit scheme would violate the CFL bound.
    CflViolation { tau: f64, tau_max: f64 },
    /// The time march produced a non-finite value.
    Unstable { step: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Geometry(msg) => write!(f, "geometry error: {msg}"),
            Error::Discretization(msg) => write!(f, "discretization error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::CflViolation { tau, tau_max } => write!(
                f,
                "CFL violation: tau = {tau} exceeds the stability bound {tau_max}"
            ),
            Error::Unstable { step } => {
                write!(f, "time march unstable: non-finite value at step {step}")
            }
        }
    }
}

impl core::error::Error for Error {}
