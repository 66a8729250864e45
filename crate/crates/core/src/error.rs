use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure classes, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad input: files, catalogs, flags, sizes.
    Validation,
    /// The scorer backend or its transport failed.
    Backend,
    /// An internal invariant was violated.
    Internal,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to parse {context}: {message}")]
    Parse { context: String, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("example `{example_id}` is missing fields required by prompt `{prompt_id}`: {}", missing.join(", "))]
    MissingFields {
        prompt_id: String,
        example_id: String,
        missing: Vec<String>,
    },

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("missing gold labels for {} example(s): {}", .0.len(), preview(.0))]
    MissingGold(Vec<String>),

    #[error("backend failed for {} cell(s) [{}]: {message}", failed.len(), preview_pairs(failed))]
    Backend {
        failed: Vec<(String, String)>,
        message: String,
    },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("protocol violation: {message} (payload: {excerpt})")]
    Protocol { message: String, excerpt: String },

    #[error("score cache {path} is corrupt at line {line}: {reason}; delete it or run with a cache reset")]
    CacheCorrupt { path: PathBuf, line: usize, reason: String },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Backend { .. } | Error::Transport(_) | Error::Protocol { .. } => ErrorKind::Backend,
            Error::Invariant(_) => ErrorKind::Internal,
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }
}

fn preview(items: &[String]) -> String {
    const SHOWN: usize = 5;
    let mut out = items.iter().take(SHOWN).cloned().collect::<Vec<_>>().join(", ");
    if items.len() > SHOWN {
        out.push_str(", ...");
    }
    out
}

fn preview_pairs(items: &[(String, String)]) -> String {
    preview(&items.iter().map(|(p, e)| format!("({p}, {e})")).collect::<Vec<_>>())
}
