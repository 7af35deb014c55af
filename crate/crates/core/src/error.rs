use thiserror::Error;

use crate::grid::EnergyTrace;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("solver failure: {message}")]
    Solver {
        message: String,
        trace: Option<EnergyTrace>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn solver(msg: impl Into<String>, trace: Option<EnergyTrace>) -> Self {
        Error::Solver {
            message: msg.into(),
            trace,
        }
    }
}

macro_rules! ensure_arg {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Argument(format!($($fmt)+)));
        }
    };
}
pub(crate) use ensure_arg;
