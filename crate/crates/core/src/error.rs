use thiserror::Error;

/// Errors produced anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("eigensolver did not converge at basis size {basis_size} (last change {residual:.3e} GHz)")]
    Convergence { basis_size: usize, residual: f64 },

    #[error("site {site}: {source}")]
    Site {
        site: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("integration failed at t = {time_ns} ns: {reason}")]
    Integration { time_ns: f64, reason: String },

    #[error("ensemble failed: {failed} of {total} realizations did not complete")]
    Ensemble { failed: usize, total: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    /// Wrap an error with the index of the chain site that produced it.
    pub fn at_site(self, site: usize) -> Self {
        Error::Site {
            site,
            source: Box::new(self),
        }
    }

    /// True for errors caused by user input rather than runtime failure.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::Config(_) | Error::Parameter(_) | Error::Checkpoint(_) => true,
            Error::Site { source, .. } => source.is_config_error(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
