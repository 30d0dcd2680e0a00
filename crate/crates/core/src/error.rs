use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("user problem infeasible: karma {karma} below required {required}")]
    Infeasible { karma: i64, required: i64 },

    #[error("arc ordering violated: {0}")]
    Ordering(String),

    #[error("karma state space exceeds cap of {cap} states")]
    StateExplosion { cap: usize },

    #[error("no feasible price vector: {0}")]
    NoFeasiblePrices(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Validation(vec![msg.into()])
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Convergence { .. } => 3,
            Error::Io { .. } => 4,
            _ => 2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let conv = Error::Convergence {
            what: "x",
            iterations: 1,
            residual: 1.0,
        };
        assert_eq!(conv.exit_code(), 3);
        let io = Error::io("p", std::io::Error::other("boom"));
        assert_eq!(io.exit_code(), 4);
        assert_eq!(Error::invalid("bad").exit_code(), 2);
        assert_eq!(Error::Ordering("o".into()).exit_code(), 2);
        assert_eq!(
            Error::Parse {
                context: "c".into(),
                message: "m".into()
            }
            .exit_code(),
            2
        );
    }
}
