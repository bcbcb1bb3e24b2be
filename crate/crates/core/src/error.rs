use std::fmt;
use std::io;
use std::path::PathBuf;

/// Errors raised anywhere in the library.
#[derive(Debug)]
pub enum Error {
    /// Two operands have incompatible extents.
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A configuration value is invalid or inconsistent.
    Config(String),
    /// A caller broke an operation's contract (non-scalar loss, masking cls, ...).
    Contract(String),
    /// Malformed dataset container.
    Format(FormatError),
    Io { path: PathBuf, source: io::Error },
}

/// Ways a `TPF1` container can be malformed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FormatError {
    BadMagic([u8; 4]),
    UnsupportedVersion(u16),
    Truncated { expected: usize, actual: usize },
    TrailingBytes { expected: usize, actual: usize },
    UnknownDtype(u8),
    UnknownTask(u8),
    LabelOutOfRange { index: usize, label: u32, n_classes: u32 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// True for errors caused by bad input rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. })
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension { op, lhs, rhs } => {
                write!(f, "dimension mismatch in {op}: {lhs:?} vs {rhs:?}")
            }
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Format(e) => write!(f, "malformed dataset: {e}"),
            Error::Io { path, source } => write!(f, "{}: {source}", path.display()),
        }
    }
}

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FormatError::BadMagic(m) => write!(f, "bad magic {m:?}, expected \"TPF1\""),
            FormatError::UnsupportedVersion(v) => write!(f, "unsupported version {v}"),
            FormatError::Truncated { expected, actual } => {
                write!(f, "truncated: expected {expected} bytes, found {actual}")
            }
            FormatError::TrailingBytes { expected, actual } => {
                write!(f, "trailing data: expected {expected} bytes, found {actual}")
            }
            FormatError::UnknownDtype(c) => write!(f, "unknown dtype code {c}"),
            FormatError::UnknownTask(c) => write!(f, "unknown task code {c}"),
            FormatError::LabelOutOfRange {
                index,
                label,
                n_classes,
            } => write!(f, "label {label} at sample {index} exceeds {n_classes} classes"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl std::error::Error for FormatError {}

impl From<FormatError> for Error {
    fn from(e: FormatError) -> Self {
        Error::Format(e)
    }
}
