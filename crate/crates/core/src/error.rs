use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {what}: {source}")]
    Parse {
        what: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid world: {0}")]
    InvalidWorld(String),

    #[error("object {id}: {reason}")]
    InvalidObject { id: u32, reason: String },

    #[error("invalid map dimensions: categories={categories}, side={side}")]
    InvalidMapDimensions { categories: u32, side: usize },

    #[error("snapshot: {0}")]
    Snapshot(String),

    #[error("instance {id} has category {expected}, update labelled it {actual}")]
    CategoryMismatch { id: u32, expected: u32, actual: u32 },

    #[error("unknown instance id {0}")]
    UnknownInstance(u32),

    #[error("category goals are localized by distance, not scored")]
    CategoryGoalScored,

    #[error("cannot aggregate an empty score list")]
    EmptyScores,

    #[error("invalid match config: {0}")]
    InvalidMatchConfig(String),

    #[error("annotation {index}: {what}")]
    BadAnnotation { index: usize, what: String },

    #[error("episode generation: {0}")]
    Episode(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Parse {
            what: what.into(),
            source,
        }
    }
}
