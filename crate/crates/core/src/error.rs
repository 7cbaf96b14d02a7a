use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// The variants line up with the CLI exit-code classes: shape, parameter,
/// state and contract violations are caller mistakes; `Format` and `Io` are
/// data problems; `Numeric` means a computation left the finite range.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Shape(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("numeric error in {context}: non-finite value produced")]
    Numeric { context: String },

    #[error("state error: {0}")]
    State(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Prefixes `ctx` to the message. I/O errors already name their path.
    pub fn in_context(self, ctx: &str) -> Self {
        let pre = |m: String| format!("{ctx}: {m}");
        match self {
            Error::Shape(m) => Error::Shape(pre(m)),
            Error::Parameter(m) => Error::Parameter(pre(m)),
            Error::Numeric { context } => Error::Numeric {
                context: pre(context),
            },
            Error::State(m) => Error::State(pre(m)),
            Error::Contract(m) => Error::Contract(pre(m)),
            Error::Format(m) => Error::Format(pre(m)),
            io @ Error::Io { .. } => io,
        }
    }
}
