use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid permutation: {0}")]
    Permutation(String),

    #[error(
        "inadmissible problem: margin {margin:.6e} (remaining horizon), \
         {margin_full:.6e} (full horizon); need lambda > c*tau*(1+tau)"
    )]
    Inadmissible { margin: f64, margin_full: f64 },

    #[error(
        "fixed-point iteration did not reach tol after {iterations} iterations \
         (residual {residual:.6e}, observed contraction ratio {ratio:.6})"
    )]
    NonConvergence {
        iterations: usize,
        residual: f64,
        ratio: f64,
    },

    #[error("matrix ODE blow-up at t = {t:.6}: norm {norm:.3e} exceeds guard")]
    Blowup { t: f64, norm: f64 },

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("config error at key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
