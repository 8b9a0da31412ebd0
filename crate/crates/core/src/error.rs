use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A caller-supplied value violates an operation's precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// The statistic is undefined for the given data (zero variance, too few points).
    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),
    /// A computation produced a non-finite value.
    #[error("numeric failure: {0}")]
    NumericFailure(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::Error::InvalidArgument(alloc::format!($($arg)*))
    };
}

macro_rules! undefined {
    ($($arg:tt)*) => {
        $crate::Error::UndefinedStatistic(alloc::format!($($arg)*))
    };
}

pub(crate) use invalid;
pub(crate) use undefined;
