use alloc::boxed::Box;
use alloc::string::String;

use crate::calendar::YearMonth;
use crate::trainer::TrainReport;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("station {station}: {reason}")]
    InvalidStation { station: String, reason: String },
    #[error("station {station}: duplicate month {month}")]
    DuplicateMonth { station: String, month: YearMonth },
    #[error("station {station}: negative rainfall {value} at {month}")]
    NegativeRainfall {
        station: String,
        month: YearMonth,
        value: f64,
    },
    #[error("invalid month {year}-{month}")]
    InvalidMonth { year: i32, month: u32 },
    #[error("station {station}: calendar month {month} has no observations")]
    NoObservations { station: String, month: u8 },
    #[error("no daily values for {0}")]
    EmptyMonth(YearMonth),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("series do not share an overlapping span")]
    EmptySpan,
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("zero variance: {0}")]
    ZeroVariance(String),
    #[error("{what} too short: need {needed}, found {found}")]
    TooShort {
        what: &'static str,
        needed: usize,
        found: usize,
    },
    #[error("unknown climate index {0}")]
    UnknownIndex(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("missing edge feature for station {0}")]
    MissingEdgeFeature(String),
    #[error("fit refused: {found} exceedances, more than {required} required")]
    TooFewExceedances { found: usize, required: usize },
    #[error("excess {excess} outside GPD support [0, {upper}]")]
    OutsideSupport { excess: f64, upper: f64 },
    #[error("probability {0} has an infinite quantile")]
    InfiniteQuantile(f64),
    #[error("all values equal, percentile threshold is degenerate")]
    DegeneratePercentile,
    #[error("forward cache is missing or does not match the inputs")]
    StaleCache,
    #[error("training diverged at epoch {}", .0.epochs.len())]
    Diverged(Box<TrainReport>),
    #[error("split spans overlap or are out of order: {0}")]
    OverlappingSplits(String),
    #[error("design matrix is rank deficient")]
    RankDeficient,
}
