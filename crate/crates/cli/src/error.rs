//! CLI-level errors and the machine-readable record printed on failure.

use std::fmt;
use std::path::Path;

use serde_json::json;

#[derive(Debug)]
pub enum CliError {
    /// Error bubbled up from the pipeline library.
    Core(routines_core::Error),
    /// A required artifact of an earlier stage is absent.
    MissingArtifact { artifact: String, stage: String },
    /// Bad configuration value; `key` is the dotted path into the file.
    Config { key: String, message: String },
    /// Anything else worth reporting verbatim.
    Message(String),
    Io { path: String, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, CliError>;

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::MissingArtifact { artifact, stage } => {
                write!(f, "missing artifact `{artifact}`; run the `{stage}` stage first")
            }
            CliError::Config { key, message } => {
                write!(f, "config key `{key}`: {message}")
            }
            CliError::Message(m) => write!(f, "{m}"),
            CliError::Io { path, source } => write!(f, "{path}: {source}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<routines_core::Error> for CliError {
    fn from(e: routines_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(routines_core::Error::from(e))
    }
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    /// The JSON record written to stderr before a nonzero exit.
    pub fn record(&self) -> serde_json::Value {
        let mut inner = json!({ "message": self.to_string() });
        let obj = inner.as_object_mut().expect("object literal");
        match self {
            CliError::Core(_) => {
                obj.insert("kind".into(), "pipeline".into());
            }
            CliError::MissingArtifact { artifact, stage } => {
                obj.insert("kind".into(), "missing_artifact".into());
                obj.insert("artifact".into(), artifact.as_str().into());
                obj.insert("run_stage".into(), stage.as_str().into());
            }
            CliError::Config { key, .. } => {
                obj.insert("kind".into(), "config".into());
                obj.insert("key".into(), key.as_str().into());
            }
            CliError::Message(_) => {
                obj.insert("kind".into(), "error".into());
            }
            CliError::Io { path, .. } => {
                obj.insert("kind".into(), "io".into());
                obj.insert("path".into(), path.as_str().into());
            }
        }
        json!({ "error": inner })
    }
}
