use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParseErrorCode {
    #[serde(rename = "syntax-error")]
    Syntax,
    #[serde(rename = "unsupported-construct")]
    UnsupportedConstruct,
    #[serde(rename = "unsupported-relationship-kind")]
    UnsupportedRelationshipKind,
}

impl ParseErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ParseErrorCode::Syntax => "syntax-error",
            ParseErrorCode::UnsupportedConstruct => "unsupported-construct",
            ParseErrorCode::UnsupportedRelationshipKind => "unsupported-relationship-kind",
        }
    }
}

impl fmt::Display for ParseErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{code} at line {line}, column {column}: {message}")]
pub struct ParseError {
    pub code: ParseErrorCode,
    pub message: String,
    pub line: usize,
    pub column: usize,
}

impl ParseError {
    pub fn new(code: ParseErrorCode, message: String, line: usize, column: usize) -> Self {
        Self {
            code,
            message,
            line,
            column,
        }
    }
}

/// Failure while evaluating a query against a graph.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("type error: {0}")]
    Type(String),
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("query is not executable: {0}")]
    NotExecutable(String),
    #[error("result too large: more than {0} intermediate rows")]
    TooLarge(usize),
}
