//! Crate-wide error type.
//!
//! Every fallible operation returns [`Result`]. Variants are grouped by the
//! kind of contract that was violated rather than by module, so callers can
//! map them onto process exit codes (configuration/usage problems vs.
//! runtime failures) without matching on message strings.

use thiserror::Error;

/// Alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A point lies outside the support or domain an operation requires.
    #[error("domain violation: {0}")]
    Domain(String),

    /// A parameter vector or scalar argument violates its contract.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Mismatched dimensions between arguments.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An index addressed a nonexistent element.
    #[error("index out of range: {0}")]
    Index(String),

    /// A numeric routine could not reach its accuracy target; `achieved`
    /// reports the error estimate at the point of giving up.
    #[error("accuracy target not met: {context} (achieved {achieved:.3e})")]
    Numerical { context: String, achieved: f64 },

    /// A sampler's acceptance rate is too low to be usable; the message
    /// names the offending envelope constant.
    #[error("sampler efficiency too low: {0}")]
    Efficiency(String),

    /// The requested operation is not defined for this family shape.
    #[error("unsupported family: {0}")]
    UnsupportedFamily(String),

    /// Statistics supplied for an exponential family are linearly dependent.
    #[error("linearly dependent statistics: {0}")]
    LinearDependence(String),

    /// A text input (family description or experiment configuration) failed
    /// to parse; `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A configuration is syntactically valid but semantically inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A serialized stream or file is malformed; `block` locates the first
    /// affected block when meaningful.
    #[error("framing error at block {block}: {message}")]
    Framing { block: u64, message: String },

    /// Inputs belong to different configurations (family hash, dimensions,
    /// or format version disagree).
    #[error("incompatible inputs: {0}")]
    Compatibility(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad user input (configuration, parse,
    /// parameter, shape) as opposed to runtime failures.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Parameter(_)
                | Error::Shape(_)
                | Error::Parse { .. }
                | Error::Config(_)
                | Error::Domain(_)
        )
    }
}
