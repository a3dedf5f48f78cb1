//! Error type shared by every pipeline stage.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("referential error: {0}")]
    Referential(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("empty dataset after filtering (min_user_checkins={min_user}, min_poi_visits={min_poi})")]
    EmptyDataset { min_user: usize, min_poi: usize },

    #[error("cannot split user {user:?}: {msg}")]
    Split { user: String, msg: String },

    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training diverged at iteration {iteration}: objective is not finite")]
    Diverged { iteration: usize },

    #[error("cutoff {k} exceeds {available} rankable POIs")]
    Cutoff { k: usize, available: usize },

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by invalid inputs or configuration, as opposed
    /// to I/O failures or numerical divergence.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Diverged { .. })
    }
}
