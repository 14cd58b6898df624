use std::path::PathBuf;

use crate::page::{PageId, RepLevel};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown page `{0}`")]
    UnknownPage(String),

    #[error("unknown session `{0}`")]
    UnknownSession(String),

    #[error("page `{page}` has no {level:?} representation on its degradation path")]
    InvalidRepresentation { page: PageId, level: RepLevel },

    #[error("page `{page}` is not visible to session `{session}`")]
    NotVisible { page: PageId, session: String },

    #[error("page `{0}` is not resident")]
    NotResident(PageId),

    #[error("pointer for page `{page}` does not resolve: {reason}")]
    DanglingPointer { page: PageId, reason: String },

    #[error("unknown workload family `{0}` (expected evidence_heavy, interruption_heavy, lifecycle_torture or multi_session)")]
    UnknownFamily(String),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("unknown policy preset `{0}`")]
    UnknownPolicy(String),

    #[error("invalid workload: {0}")]
    InvalidWorkload(String),

    #[error("invalid policy configuration: {0}")]
    InvalidConfig(String),

    #[error("failed to parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Empty(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Parse {
            path: path.into(),
            source,
        }
    }
}
