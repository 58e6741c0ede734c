//! Error type shared across the library.

use std::fmt;

/// Errors reported by fallible operations.
///
/// Contract violations that indicate a programming bug (e.g. out-of-range
/// grid indices passed to a hot inner kernel) panic instead; this type covers
/// data-dependent failures a caller may want to recover from.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Frames or grids with incompatible dimensions were combined.
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    /// A channel tap has a delay index that does not fit the frame.
    DelayOutOfRange { delay: usize, m_subcarriers: usize },
    /// More distinct delays were requested than the delay range holds.
    InfeasibleDistinctDelays { paths: usize, l_max: usize },
    /// A device's principal path gain is zero, so phase alignment is undefined.
    ZeroPrincipalGain { device: usize },
    /// The denoising factor must be strictly positive where it divides.
    ZeroDenoising,
    /// A row count or row index does not match the zero-padded layout.
    LayoutMismatch { expected: usize, got: usize },
    /// A SIC row was estimated before one of its interferers.
    PlanOrderViolation { row: usize, missing: usize },
    /// Invalid experiment configuration; carries the offending field name.
    InvalidConfig { field: &'static str, reason: String },
    /// Wrapper for I/O failures in the experiment harness.
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { expected, got } => write!(
                f,
                "dimension mismatch: expected {}x{}, got {}x{}",
                expected.0, expected.1, got.0, got.1
            ),
            Error::DelayOutOfRange {
                delay,
                m_subcarriers,
            } => write!(
                f,
                "path delay index {delay} does not fit a frame with {m_subcarriers} delay rows"
            ),
            Error::InfeasibleDistinctDelays { paths, l_max } => {
                write!(f, "cannot draw {paths} distinct delays from [0, {l_max}]")
            }
            Error::ZeroPrincipalGain { device } => {
                write!(f, "device {device} has a zero principal path gain")
            }
            Error::ZeroDenoising => write!(f, "denoising factor must be > 0"),
            Error::LayoutMismatch { expected, got } => {
                write!(f, "expected {expected} data rows, got {got}")
            }
            Error::PlanOrderViolation { row, missing } => {
                write!(f, "row {row} estimated before its interferer row {missing}")
            }
            Error::InvalidConfig { field, reason } => {
                write!(f, "invalid config field `{field}`: {reason}")
            }
            Error::Io(msg) => write!(f, "i/o error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
