use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Syntax or schema error in a configuration file.
    #[error("{}", format_parse(.path, *.line, .message))]
    Parse {
        path: PathBuf,
        line: Option<usize>,
        message: String,
    },

    #[error("invalid override `{spec}`: {reason}")]
    Override { spec: String, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Core(#[from] pod2c::Error),
}

fn format_parse(path: &std::path::Path, line: Option<usize>, message: &str) -> String {
    match line {
        Some(line) => format!("{}:{line}: {message}", path.display()),
        None => format!("{}: {message}", path.display()),
    }
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 for usage and input problems, 2 for numerical
    /// failures inside the pipeline.
    pub fn exit_code(&self) -> i32 {
        use pod2c::Error as E;
        match self {
            Self::Core(
                E::SingularGram { .. }
                | E::RankDeficient { .. }
                | E::Diverged { .. }
                | E::IllConditioned { .. }
                | E::Numerical(_)
                | E::InsufficientHistory { .. }
                | E::EmptyDataset,
            ) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
