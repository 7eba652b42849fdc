use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected} entries, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("density {rho} veh/m outside [0, {rho_max}]")]
    DensityDomain { rho: f64, rho_max: f64 },

    #[error("speed-limit ratio must be positive and finite, got {0}")]
    RatioDomain(f64),

    #[error("operation requires a periodic grid")]
    UnsupportedBoundary,

    #[error("time step {dt} s exceeds the CFL bound {max_dt} s")]
    StepRejected { dt: f64, max_dt: f64 },

    #[error("density {rho} veh/m left [0, rho_max] at cell {cell}")]
    InvariantViolated { cell: usize, rho: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("quadratic program: {0}")]
    Solver(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("config validation failed: {0}")]
    Validation(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("at t = {t} s")]
    AtTime {
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("scenario `{scenario}`")]
    Scenario {
        scenario: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at_time(self, t: f64) -> Self {
        Error::AtTime {
            t,
            source: Box::new(self),
        }
    }

    /// Tags the error with the scenario it came from.
    pub fn in_scenario(self, scenario: &str) -> Self {
        Error::Scenario {
            scenario: scenario.to_string(),
            source: Box::new(self),
        }
    }

    pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
        if expected == actual {
            Ok(())
        } else {
            Err(Error::Dimension { expected, actual })
        }
    }
}
