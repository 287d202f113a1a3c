use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
///
/// The variants are grouped the way the command-line front end maps them to
/// exit codes: parameter and configuration problems, dataset problems, and
/// numerical failures.
#[derive(Debug, Error)]
pub enum GdrError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("laplacian-requires-undirected")]
    LaplacianRequiresUndirected,

    #[error("singular-class-counts: class {class} has no training samples")]
    SingularClassCounts { class: usize },

    #[error("pagerank did not converge after {iterations} iterations (residual {residual:e})")]
    PagerankNotConverged { iterations: usize, residual: f64 },

    #[error("non-finite values in {layer}")]
    NonFinite { layer: String },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("{}:{line}: {message}", file.display())]
    Data {
        file: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dataset validation failed: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{source} (training trace: {})", trace.display())]
    Training {
        trace: PathBuf,
        #[source]
        source: Box<GdrError>,
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<GdrError>,
    },
}

impl GdrError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GdrError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn data(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        GdrError::Data {
            file: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Attach the name of the pipeline stage that failed.
    pub fn in_stage(self, stage: &'static str) -> Self {
        GdrError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The innermost error, with stage wrappers removed.
    pub fn root(&self) -> &GdrError {
        match self {
            GdrError::Stage { source, .. } | GdrError::Training { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, GdrError>;
