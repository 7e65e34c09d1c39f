use std::fmt;

use thiserror::Error;

/// Line/column position inside SQL source text, both 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Pos {
    pub line: usize,
    pub column: usize,
}

impl Pos {
    pub fn new(line: usize, column: usize) -> Self {
        Self { line, column }
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at {pos}: {message}")]
    Syntax {
        pos: Pos,
        message: String,
        expected: Vec<String>,
    },
    #[error("unsupported construct at {pos}: {construct}")]
    Unsupported { pos: Pos, construct: String },
    #[error("unsupported query shape: {0}")]
    UnsupportedShape(String),
    #[error("not a materialized view statement")]
    NotMaterialized,
    #[error("unknown table: {0}")]
    UnknownTable(String),
    #[error("unknown column: {0}")]
    UnknownColumn(String),
    #[error("ambiguous column: {0}")]
    AmbiguousColumn(String),
    #[error("unknown view: {0}")]
    UnknownView(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("aggregate misuse: {0}")]
    AggregateMisuse(String),
    #[error("integer overflow")]
    Overflow,
    #[error("division by zero")]
    DivisionByZero,
    #[error("negative state: {0}")]
    NegativeState(String),
    #[error("missing delta table for {0}")]
    MissingDelta(String),
    #[error("name collision: {0}")]
    NameCollision(String),
    #[error("unique constraint violated on index {index}")]
    UniqueViolation { index: String },
    #[error("changelog line {line}: {message}")]
    Changelog { line: usize, message: String },
    #[error("lowering error: {0}")]
    Lowering(String),
    #[error("execution error: {0}")]
    Execution(String),
    #[error("injected failure at statement {statement}, row {row}")]
    Injected { statement: usize, row: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("persistence format error: {0}")]
    Format(String),
}

/// Coarse error category, used by the CLI to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Parse,
    Unsupported,
    Semantic,
    State,
    Io,
}

impl ErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Parse => "parse",
            ErrorKind::Unsupported => "unsupported",
            ErrorKind::Semantic => "semantic",
            ErrorKind::State => "state",
            ErrorKind::Io => "io",
        }
    }
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Syntax { .. } | Error::NotMaterialized | Error::Changelog { .. } => {
                ErrorKind::Parse
            }
            Error::Unsupported { .. } | Error::UnsupportedShape(_) | Error::Lowering(_) => {
                ErrorKind::Unsupported
            }
            Error::NegativeState(_)
            | Error::UniqueViolation { .. }
            | Error::Injected { .. }
            | Error::MissingDelta(_)
            | Error::NameCollision(_)
            | Error::UnknownView(_) => ErrorKind::State,
            Error::Io { .. } | Error::Format(_) => ErrorKind::Io,
            _ => ErrorKind::Semantic,
        }
    }

    /// Source position, when the error is tied to SQL text.
    pub fn pos(&self) -> Option<Pos> {
        match self {
            Error::Syntax { pos, .. } | Error::Unsupported { pos, .. } => Some(*pos),
            _ => None,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
