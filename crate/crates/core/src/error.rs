use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (dimensions, empty inputs,
    /// out-of-range parameters).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The Gram matrix of a design is not invertible.
    #[error("singular design: Gram matrix is not invertible (n = {n}, d = {d})")]
    SingularDesign { n: usize, d: usize },

    /// A state that construction should make unreachable.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Contract(msg()))
    }
}
