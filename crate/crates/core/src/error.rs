use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An argument violated an operation's precondition.
    Argument(String),
    /// Tensor or state dimensions do not line up.
    Shape(String),
    /// The tape was used incorrectly (foreign variable, non-scalar output).
    Usage(String),
    /// A probability that must be positive was zero.
    Domain(String),
    /// Two evaluations of a function that must be deterministic disagreed.
    NonDeterministic { first: f64, second: f64 },
    /// A loss or gradient became NaN or infinite.
    NonFinite(String),
    /// Pearson correlation requested on a constant coordinate.
    UndefinedCorrelation,
    /// A line of a text input could not be parsed.
    Parse { line: usize, message: String },
    /// An input collection was empty.
    Empty(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Argument(m) => write!(f, "invalid argument: {m}"),
            Error::Shape(m) => write!(f, "shape mismatch: {m}"),
            Error::Usage(m) => write!(f, "tape misuse: {m}"),
            Error::Domain(m) => write!(f, "domain error: {m}"),
            Error::NonDeterministic { first, second } => write!(
                f,
                "function is not deterministic: two forward passes gave {first:e} and {second:e}"
            ),
            Error::NonFinite(m) => write!(f, "non-finite value: {m}"),
            Error::UndefinedCorrelation => {
                write!(f, "correlation undefined: a coordinate has zero variance")
            }
            Error::Parse { line, message } => write!(f, "line {line}: {message}"),
            Error::Empty(what) => write!(f, "empty input: {what}"),
        }
    }
}

impl core::error::Error for Error {}
