//! Crate-wide error type and reason codes for soft (recorded, non-fatal) skips.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("samples outside grid span: {0:?}")]
    OutOfRange(Vec<chrono::NaiveDate>),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate record for pixel {pixel_id} on {date}")]
    DuplicateRecord {
        pixel_id: String,
        date: chrono::NaiveDate,
    },

    #[error("degenerate climatology week {week}: max equals min")]
    DegenerateWeek { week: u32 },

    #[error("insufficient climatology data for week {week}: {count} value(s), need at least 2")]
    InsufficientClimatology { week: u32, count: usize },

    #[error("GP fit failed to converge: best log marginal likelihood {best_lml}")]
    FitFailure { best_lml: f64 },

    #[error("kernel matrix not positive definite even with jitter {max_jitter}")]
    Conditioning { max_jitter: f64 },

    #[error("ROC undefined: no records with truth class {missing_class}")]
    UndefinedRoc { missing_class: String },

    #[error("degenerate metric: {0}")]
    DegenerateMetric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("kernel parse error: {0}")]
    KernelParse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code class: 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::KernelParse(_) => 1,
            Error::FitFailure { .. } | Error::Conditioning { .. } => 3,
            _ => 2,
        }
    }
}

/// Machine-parseable reason a per-series operation was skipped rather than failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SkipReason {
    /// A required observation slot is a gap.
    Gap,
    /// Not enough history before the issue date.
    InsufficientHistory,
    /// Climatology week with max equal to min.
    DegenerateWeek,
}

impl std::fmt::Display for SkipReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SkipReason::Gap => write!(f, "GAP"),
            SkipReason::InsufficientHistory => write!(f, "INSUFFICIENT_HISTORY"),
            SkipReason::DegenerateWeek => write!(f, "DEGENERATE_WEEK"),
        }
    }
}
