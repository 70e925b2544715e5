use std::path::PathBuf;

use telerain_core::Error as CoreError;

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing artifact {} (produced by the `{stage}` stage)", path.display())]
    MissingArtifact { stage: &'static str, path: PathBuf },
    #[error("{stage}: existing artifacts were built with a different config or seed; rerun with --force")]
    StaleArtifacts { stage: &'static str },
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: u64, message: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl PipelineError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        PipelineError::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Process exit status: 2 config, 3 missing artifact, 4 numerical
    /// failure, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::StaleArtifacts { .. } => 2,
            PipelineError::MissingArtifact { .. } => 3,
            PipelineError::Core(e) => match e {
                CoreError::InvalidParameter { .. } | CoreError::OverlappingSplits(_) => 2,
                CoreError::Diverged(_)
                | CoreError::NonFinite(_)
                | CoreError::RankDeficient
                | CoreError::ZeroVariance(_)
                | CoreError::StaleCache
                | CoreError::InfiniteQuantile(_) => 4,
                _ => 1,
            },
            _ => 1,
        }
    }
}
