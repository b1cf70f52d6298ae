use thiserror::Error;

/// Errors raised by the toolkit. Numerical failures are never hidden:
/// a degenerate cloud or a support violation aborts the computation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("degenerate particle cloud at step {step}: every weight is zero")]
    DegenerateCloud { step: usize },

    #[error("all weights are zero in {0}")]
    ZeroMass(&'static str),

    #[error("proposal support violation: {0}")]
    SupportViolation(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("singular configuration: {0}")]
    Singular(String),

    #[error("stale or mismatched activation tape: {0}")]
    StaleTape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("malformed stream file: {0}")]
    Stream(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
