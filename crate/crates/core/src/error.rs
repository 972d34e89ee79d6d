use std::fmt;

use crate::selection::SelectionTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// A tensor or argument did not have the expected extent along some axis.
    Shape {
        context: &'static str,
        dimension: String,
        expected: usize,
        actual: usize,
    },
    NonFinite {
        context: &'static str,
        index: usize,
    },
    InvalidArgument(String),
    InfeasibleShape(String),
    InvalidClass {
        index: usize,
        n_classes: usize,
    },
    EmptyDataset(&'static str),
    UnknownColumn(String),
    ParseCell {
        row: usize,
        column: String,
        value: String,
    },
    EmptyFile(String),
    Divergence {
        epoch: usize,
        loss: f64,
    },
    /// A selection loop stopped early; the iterations completed so far are kept.
    SelectionAborted {
        iteration: usize,
        source: Box<Error>,
        partial: Box<SelectionTrace>,
    },
    Format(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape {
                context,
                dimension,
                expected,
                actual,
            } => write!(
                f,
                "{context}: shape mismatch on {dimension} (expected {expected}, got {actual})"
            ),
            Error::NonFinite { context, index } => {
                write!(f, "{context}: non-finite value at flat index {index}")
            }
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::InfeasibleShape(msg) => write!(f, "infeasible shapes: {msg}"),
            Error::InvalidClass { index, n_classes } => {
                write!(f, "class index {index} out of range for {n_classes} classes")
            }
            Error::EmptyDataset(ctx) => write!(f, "empty dataset: {ctx}"),
            Error::UnknownColumn(name) => write!(f, "unknown column '{name}'"),
            Error::ParseCell { row, column, value } => {
                write!(f, "row {row}, column '{column}': cannot parse '{value}' as a number")
            }
            Error::EmptyFile(path) => write!(f, "empty file: {path}"),
            Error::Divergence { epoch, loss } => {
                write!(f, "training diverged at epoch {epoch} (loss = {loss})")
            }
            Error::SelectionAborted { iteration, source, .. } => {
                write!(f, "selection aborted at iteration {iteration}: {source}")
            }
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::SelectionAborted { source, .. } => Some(source.as_ref()),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub(crate) fn shape_err(context: &'static str, dimension: impl Into<String>, expected: usize, actual: usize) -> Error {
    Error::Shape {
        context,
        dimension: dimension.into(),
        expected,
        actual,
    }
}
