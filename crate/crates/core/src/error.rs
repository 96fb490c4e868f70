use core::fmt;

use alloc::string::String;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An argument is outside the domain an operation is defined on.
    Domain(String),
    /// A configuration value violates its declared invariant.
    Config(String),
    /// Two histograms built on different supports were compared.
    BinningMismatch,
    /// Not enough (or degenerate) data for the requested statistic.
    InsufficientData(String),
    Unsupported(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::BinningMismatch => f.write_str("histograms use different binning"),
            Error::InsufficientData(msg) => write!(f, "insufficient data: {msg}"),
            Error::Unsupported(msg) => write!(f, "unsupported: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
