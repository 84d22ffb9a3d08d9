use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error(transparent)]
    Core(#[from] shortcut_probe::Error),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Other(String),

    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<HarnessError>,
    },
}

impl HarnessError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            s @ HarnessError::Stage { .. } => s,
            other => HarnessError::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// 0 ok, 2 config, 3 verification, 4 training, 1 anything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Verification(_) => 3,
            HarnessError::Training(_) => 4,
            HarnessError::Core(shortcut_probe::Error::Training { .. }) => 4,
            HarnessError::Core(shortcut_probe::Error::Verification(_)) => 3,
            HarnessError::Stage { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}

impl From<&HarnessError> for ExitCode {
    fn from(e: &HarnessError) -> Self {
        ExitCode::from(e.exit_code())
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
