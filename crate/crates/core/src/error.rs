//! Error taxonomy shared across the crate.
//!
//! The four classes map onto the CLI exit codes: config (2), schema and
//! data (3), estimation (4).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: bad hyperparameters, levels, grids, paths.
    #[error("config error: {0}")]
    Config(String),

    /// The input file does not match the declared column schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// The input data violate a precondition (non-binary treatment,
    /// missing covariate cell, non-finite value, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Estimation cannot proceed (degenerate cells, singular systems, ...).
    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn schema(msg: impl Into<String>) -> Self {
        Error::Schema(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn estimation(msg: impl Into<String>) -> Self {
        Error::Estimation(msg.into())
    }

    /// Estimation error tagged with the (1-based) time point it occurred at.
    pub fn estimation_at(time: usize, msg: impl Into<String>) -> Self {
        Error::Estimation(format!("{} at t={time}", msg.into()))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
