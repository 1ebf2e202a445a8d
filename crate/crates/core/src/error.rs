use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {err}", path.display())]
    Io { path: PathBuf, err: std::io::Error },

    #[error("{}: {msg}", path.display())]
    Parse { path: PathBuf, msg: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("classifier backend failed for views {views:?}: {msg}")]
    Backend { views: Vec<usize>, msg: String },

    #[error("stage `{stage}` failed{}: {inner}", frame.map(|f| format!(" at frame {f}")).unwrap_or_default())]
    Stage {
        stage: &'static str,
        frame: Option<usize>,
        inner: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            err: source,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str, frame: Option<usize>) -> Self {
        Error::Stage {
            stage,
            frame,
            inner: Box::new(self),
        }
    }
}
