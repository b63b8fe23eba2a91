use alloc::string::String;

/// Errors raised by the tensor engine, networks, losses and training step.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Shapes or architecture descriptors that do not fit together.
    #[error("configuration error: {0}")]
    Config(String),
    /// An operation produced NaN or infinity.
    #[error("numeric error: non-finite value produced by `{op}`")]
    NonFinite { op: &'static str },
    /// A loss term evaluated to NaN or infinity.
    #[error("numeric error: loss term `{term}` is not finite (step {step})")]
    NonFiniteLoss { term: &'static str, step: u64 },
    /// API misuse: backward on a non-scalar, empty loss input, missing gradient.
    #[error("usage error: {0}")]
    Usage(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(alloc::format!($($arg)*)) };
}

macro_rules! usage_err {
    ($($arg:tt)*) => { $crate::error::Error::Usage(alloc::format!($($arg)*)) };
}

pub(crate) use config_err;
pub(crate) use usage_err;
