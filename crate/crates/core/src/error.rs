use thiserror::Error;

/// Errors produced anywhere in the assimilation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("agent timestep for state {psi} sums to {total}, expected 1")]
    UnnormalizedTimestep { psi: usize, total: f64 },

    #[error("enumeration space of {size} trajectories exceeds ceiling {ceiling}")]
    EnumerationCeiling { size: f64, ceiling: f64 },

    #[error("constraint is unbounded inside the box on variable {var}")]
    UnboundedConstraint { var: usize },

    #[error("box lower corner must be at the origin (variable {var})")]
    BoxNotAtOrigin { var: usize },

    #[error("variable {var} has no finite upper bound; supply a count cap or use the Fermionic assumption")]
    InfiniteBox { var: usize },

    #[error("constraint references variable {var} but only {dims} exist")]
    VariableOutOfRange { var: usize, dims: usize },

    #[error("equality system is inconsistent: {0}")]
    Infeasible(String),

    #[error("zero pivot at row {row}, column {col}")]
    ZeroPivot { row: usize, col: usize },

    #[error("cannot draw from an empty sum-tree")]
    EmptySumTree,

    #[error("no feasible state found after {0} proposals")]
    InitializationFailed(u64),

    #[error("observation generation failed to produce a Fermionic trajectory after {0} attempts")]
    RetryCapExceeded(usize),

    #[error("diagnostic undefined: {0}")]
    UndefinedDiagnostic(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Tags an error with the pipeline stage that produced it.
    pub fn at(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
