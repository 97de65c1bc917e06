use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),

    /// The k-NN graph split into several components. `labels[i]` is the
    /// component of vertex `i`; raising `k` usually fixes it.
    #[error("graph is disconnected ({n_components} components); try a larger k")]
    GraphDisconnected {
        n_components: usize,
        labels: Vec<usize>,
    },

    #[error("vertices {0} and {1} share an embedding; edge ratio undefined")]
    DivisionDegenerate(usize, usize),

    #[error("solver diverged at iteration {iteration} (objective {value:e}); reduce the step size")]
    Divergence { iteration: usize, value: f64 },

    #[error("loss budget {budget} is below the unconstrained minimum {floor}")]
    InfeasibleBudget { budget: f64, floor: f64 },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("oracle could not certify its solution: {0}")]
    OracleUncertified(String),

    #[error("unknown {kind} strategy `{name}` (known: {known})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        known: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
