use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand or container extents do not fit together.
    Dimension(String),
    /// An API precondition was violated (e.g. backward on a non-scalar).
    Contract(String),
    /// Input data outside its valid domain (e.g. a label >= class count).
    Data(String),
    /// Invalid configuration value.
    Config(String),
    /// Phantom geometry cannot be generated for the requested extents.
    Generation(String),
    /// Transform requested for an extent it does not support.
    UnsupportedExtent(String),
    /// Loss became non-finite.
    Training { step: usize, message: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(m) => write!(f, "dimension error: {m}"),
            Error::Contract(m) => write!(f, "contract error: {m}"),
            Error::Data(m) => write!(f, "data error: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Generation(m) => write!(f, "generation error: {m}"),
            Error::UnsupportedExtent(m) => write!(f, "unsupported extent: {m}"),
            Error::Training { step, message } => {
                write!(f, "training diverged at step {step}: {message}")
            }
        }
    }
}

impl core::error::Error for Error {}
