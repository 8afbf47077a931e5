use std::path::PathBuf;

/// Errors produced by every stage of the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A value violates a documented precondition.
    #[error("invalid input: {0}")]
    Input(String),

    /// A record in an input file could not be parsed.
    #[error("{origin}:{line}: {message}")]
    Parse {
        origin: String,
        line: u64,
        message: String,
    },

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// The call structure contains a cycle; one cycle is listed.
    #[error("not a DAG: cycle {}", .cycle.join(" -> "))]
    NotADag { cycle: Vec<String> },

    /// A model or scenario failed validation.
    #[error("validation failed: {0}")]
    Validation(String),

    /// Offered load at a queueing place reaches or exceeds its capacity.
    #[error("unstable workload at place `{place}`: utilization {rho:.3} >= 1")]
    Unstable { place: String, rho: f64 },

    #[error("simulation failed: {0}")]
    Simulation(String),

    /// Wraps an error with the pipeline stage that raised it.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Attaches a stage name to errors raised inside a pipeline step.
pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
