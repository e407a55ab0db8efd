use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

use crate::calendar::YearMonth;

pub type Result<T, E = MspiError> = std::result::Result<T, E>;

/// Broad failure classes, used by the command line front end to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum MspiError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}, column `{column}`: {message}")]
    Malformed {
        path: PathBuf,
        line: u64,
        column: String,
        message: String,
    },

    #[error("{path}: missing required column `{column}` in header")]
    MissingColumn { path: PathBuf, column: String },

    #[error("empty panel: no observations left after filtering")]
    EmptyPanel,

    #[error("empty series: {0}")]
    EmptySeries(String),

    #[error("duplicate date {0} in market series")]
    DuplicateDate(NaiveDate),

    #[error("non-finite value for {what} on {date}")]
    NonFinite { what: &'static str, date: NaiveDate },

    #[error("panel dates missing from the market calendar: {}", fmt_dates(.0))]
    MissingDates(Vec<NaiveDate>),

    #[error("invalid configuration field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("empty cross-section on {0}")]
    EmptyDay(NaiveDate),

    #[error("feature `{feature}` undefined for {month}: every day in the month is degenerate")]
    DegenerateFeature { feature: &'static str, month: YearMonth },

    #[error("month {0} has no statistics row for date {1}")]
    MissingStats(YearMonth, NaiveDate),

    #[error("realized volatility undefined for {0}: fewer than two daily returns")]
    UndefinedVolatility(YearMonth),

    #[error("month {0} has no market returns")]
    MissingMonth(YearMonth),

    #[error("insufficient history: need {needed} values, have {have}")]
    InsufficientHistory { needed: usize, have: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("need both classes in {0}")]
    SingleClass(&'static str),

    #[error("metric {0} undefined: {1}")]
    UndefinedMetric(&'static str, &'static str),

    #[error("design matrix is rank deficient at column `{0}`")]
    RankDeficient(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

fn fmt_dates(dates: &[NaiveDate]) -> String {
    const SHOWN: usize = 10;
    let mut s = dates
        .iter()
        .take(SHOWN)
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(", ");
    if dates.len() > SHOWN {
        s.push_str(&format!(" (+{} more)", dates.len() - SHOWN));
    }
    s
}

impl MspiError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        MspiError::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MspiError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        use MspiError::*;
        match self {
            InvalidConfig { .. } => ErrorClass::Config,
            Numeric(_) | RankDeficient(_) | DimensionMismatch { .. } => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }
}
