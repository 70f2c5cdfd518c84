use std::path::{Path, PathBuf};

use visdep_core::Error as CoreError;

pub type Result<T> = std::result::Result<T, CliError>;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{0}")]
    Usage(String),

    /// Input that parsed but holds nothing to work on.
    #[error("{0}")]
    Empty(String),
}

impl CliError {
    pub fn csv(path: &Path, source: csv::Error) -> Self {
        CliError::Csv { path: path.to_path_buf(), source }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => match e {
                CoreError::Io { .. } => "io",
                CoreError::Parse { .. } => "parse",
                CoreError::Invariant { .. } => "invariant",
                CoreError::InvalidArgument(_) => "usage",
                CoreError::Shape(_) => "shape",
                CoreError::Divergence { .. } => "divergence",
            },
            CliError::Csv { source, .. } if source.is_io_error() => "io",
            CliError::Csv { .. } => "parse",
            CliError::Usage(_) => "usage",
            CliError::Empty(_) => "empty",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "usage" => EXIT_USAGE,
            "divergence" => EXIT_DIVERGENCE,
            _ => EXIT_DATA,
        }
    }

    /// One line of JSON for stderr.
    pub fn to_json_line(&self) -> String {
        let message = self.to_string().lines().next().unwrap_or_default().trim().to_string();
        serde_json::json!({ "error": self.kind(), "code": self.exit_code(), "message": message }).to_string()
    }
}
