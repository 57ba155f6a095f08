use thiserror::Error;

/// Errors raised by state construction, simulation and analysis.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid dimension {0}: must be between 1 and {max}", max = crate::qudit::MAX_BINS)]
    InvalidDimension(usize),

    #[error("all amplitude magnitudes are zero")]
    ZeroAmplitude,

    #[error("non-finite or out-of-range input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("envelopes use different bin durations ({0} ns vs {1} ns)")]
    BinDurationMismatch(f64, f64),

    #[error("rejection sampler gave up after {0} attempts")]
    SamplerExhausted(usize),

    #[error("no cross-period reference coincidences; the record is too short")]
    NoReferenceCoincidences,

    #[error("reference integral is zero for satellite at {tau_ns} ns")]
    ZeroReference { tau_ns: f64 },

    #[error("no parallel-polarization events to analyze")]
    NoParallelEvents,

    #[error("undefined relative coincidence probability for bin pair ({0}, {1})")]
    UndefinedCell(usize, usize),

    #[error("visibility {value} for bin pair ({j}, {k}) exceeds the maximum of 2")]
    VisibilityOutOfRange { j: usize, k: usize, value: f64 },

    #[error("degenerate uncertainty at data point {0}")]
    DegenerateSigma(usize),

    #[error("{path}:{line}: {message}")]
    Format { path: String, line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
