use thiserror::Error;

use crate::diagnostics::RunDiagnostics;

#[derive(Debug, Error)]
pub enum Error {
    /// Two fields or a field and a mask were built on different grids.
    #[error("structural error: {0}")]
    Structural(String),

    /// Invalid parameters, geometry or scenario keys.
    #[error("configuration error: {0}")]
    Config(String),

    /// A time step failed the range check twice in a row.
    #[error("run aborted at t = {t}: {reason}")]
    Aborted {
        t: f64,
        reason: String,
        diagnostics: Box<RunDiagnostics>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
