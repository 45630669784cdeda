use thiserror::Error;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes of the engine.
#[derive(Debug, Error)]
pub enum Error {
    /// An input violates a precondition (non-positive rate, bad grid, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The steady-state manifold is degenerate; the replaced linear system is
    /// numerically singular (e.g. an undriven sublevel traps population).
    #[error(
        "degenerate steady state: null space dimension {null_dim}, \
         condition estimate {condition:.3e}"
    )]
    DegenerateSteadyState { null_dim: usize, condition: f64 },

    /// MCMC chains did not mix within the configured iteration budget.
    #[error(
        "MCMC did not converge: split-chain R-hat {max_rhat:.4} for \
         parameter {param} exceeds 1.1 (acceptance rate {acceptance:.3})"
    )]
    Convergence {
        max_rhat: f64,
        param: String,
        acceptance: f64,
    },

    /// The posterior piles up at the top of the temperature prior; only a
    /// lower bound on T can be quoted.
    #[error("temperature unbounded: posterior mass at prior ceiling; T > {lower_bound_mk:.1} mK")]
    TemperatureUnbounded { lower_bound_mk: f64 },

    /// The least-squares normal equations are singular.
    #[error("degenerate fit: unconstrained parameters {0:?}")]
    DegenerateFit(Vec<String>),

    /// A fitted parameter ran into its bound (e.g. no decay in the data).
    #[error("fit at bound: {0}")]
    FitBound(String),

    /// A solver failure annotated with the scan position it occurred at.
    #[error("at grid point {detuning_mhz} MHz: {source}")]
    AtGridPoint {
        detuning_mhz: f64,
        #[source]
        source: Box<Error>,
    },

    /// Malformed data file.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Malformed or incomplete configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
        let msg = e.to_string();
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => Error::Parse { line, msg },
        }
    }
}

impl Error {
    /// Process exit status for the CLI: 1 = user error, 2 = numerical
    /// failure. `TemperatureUnbounded` is a valid scientific result and is
    /// handled by the caller before this is consulted.
    pub fn exit_status(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) | Error::Parse { .. } | Error::Config(_) | Error::Io(_) => 1,
            Error::DegenerateSteadyState { .. }
            | Error::Convergence { .. }
            | Error::TemperatureUnbounded { .. }
            | Error::DegenerateFit(_)
            | Error::FitBound(_) => 2,
            Error::AtGridPoint { source, .. } => source.exit_status(),
        }
    }
}
