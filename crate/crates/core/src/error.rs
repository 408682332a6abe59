use thiserror::Error;

/// Errors raised by validation and by the estimation pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LcmError {
    #[error("entry at row {row}, column {col} is not 0 or 1")]
    NonBinaryEntry { row: usize, col: usize },

    #[error("need at least 3 items, found {found}")]
    TooFewItems { found: usize },

    #[error("response matrix has no rows")]
    NoSubjects,

    #[error("row {row} has {found} entries, expected {expected}")]
    RaggedRow {
        row: usize,
        found: usize,
        expected: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("vector norm {norm} is not 1")]
    NotUnitVector { norm: f64 },

    #[error("{items} items cannot be split into three views of at least {classes} items each")]
    TooFewItemsForViews { items: usize, classes: usize },

    #[error("invalid view partition: {0}")]
    InvalidPartition(String),

    #[error("view {view} item parameters have numerical rank below {classes}")]
    RankDeficientView { view: usize, classes: usize },

    #[error("only {found} singular values above the truncation floor, need {needed}")]
    RankCollapse { found: usize, needed: usize },

    #[error("second moment has only {found} eigenvalues above the floor, need {needed}")]
    InsufficientRank { found: usize, needed: usize },

    #[error("power iterate collapsed to zero norm")]
    ZeroIterate,

    #[error("domain error: {0}")]
    DomainError(String),
}

impl LcmError {
    /// True for failures of the numerical pipeline, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            LcmError::RankDeficientView { .. }
                | LcmError::RankCollapse { .. }
                | LcmError::InsufficientRank { .. }
                | LcmError::ZeroIterate
        )
    }
}

pub type Result<T> = std::result::Result<T, LcmError>;
