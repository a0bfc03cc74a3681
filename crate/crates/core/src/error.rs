use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Csv {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("empty relation: {0}")]
    EmptyRelation(String),

    #[error("unknown column `{column}` in relation `{alias}`")]
    UnknownColumn { alias: String, column: String },

    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },

    #[error("unknown alias `{0}`")]
    UnknownAlias(String),

    #[error("cyclic query unsupported")]
    CyclicQuery,

    #[error("join graph over relations is disconnected")]
    DisconnectedJoinGraph,

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("plan error: {0}")]
    Plan(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn syntax(pos: usize, msg: impl Into<String>) -> Error {
        Error::Syntax {
            pos,
            msg: msg.into(),
        }
    }

    /// True for errors caused by the input data or filesystem rather than
    /// the query text; the CLI maps these to a different exit code.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Csv { .. } | Error::EmptyRelation(_)
        )
    }
}
