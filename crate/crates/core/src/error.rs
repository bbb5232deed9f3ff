use thiserror::Error;

/// Errors produced by estimation, simulation and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("invalid structure: {0}")]
    InvalidStructure(String),

    #[error("invalid options: {0}")]
    InvalidOptions(String),

    #[error("singular Gram matrix for group {group} period {period} (group size {group_size})")]
    SingularCell {
        group: usize,
        period: usize,
        group_size: usize,
    },

    #[error("singular system for group {group}: {detail}")]
    SingularGroup { group: usize, detail: String },

    #[error("degenerate regime {regime} of group {group}: {detail}")]
    DegenerateRegime {
        group: usize,
        regime: usize,
        detail: String,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("all {n_starts} starts failed; first error: {first}")]
    AllStartsFailed { n_starts: usize, first: Box<Error> },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialize(String),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Serialize(_) => 2,
            Error::InvalidPanel(_) | Error::InvalidStructure(_) | Error::InvalidOptions(_) => 3,
            Error::SingularCell { .. }
            | Error::SingularGroup { .. }
            | Error::DegenerateRegime { .. }
            | Error::Numerical(_)
            | Error::AllStartsFailed { .. } => 4,
            Error::Io { .. } => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
