use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("simplex breakdown: {reason} (matrix {rows}x{cols}, max |entry| {scale:e})")]
    Simplex {
        reason: String,
        rows: usize,
        cols: usize,
        scale: f64,
    },

    #[error("minimax LP failed at state {state}: {source}")]
    StateLp {
        state: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("rank-deficient basis: columns {dependent:?} are linearly dependent on earlier columns")]
    RankDeficient { dependent: Vec<usize> },

    #[error("stationary distribution is not unique (restarts differ by {gap:e})")]
    NotUnique { gap: f64 },

    #[error("bound violated: {0}")]
    BoundViolated(String),

    #[error("state space too large: {states} states exceeds cap {cap}")]
    TooLarge { states: u64, cap: u64 },

    #[error("lspi iteration {iteration}: {source}")]
    Lspi {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn at_state(self, state: u64) -> Error {
        Error::StateLp {
            state,
            source: Box::new(self),
        }
    }

    pub fn file(path: &std::path::Path, source: std::io::Error) -> Error {
        Error::File {
            path: path.display().to_string(),
            source,
        }
    }

    /// True when the error stems from an iterative method running out of budget.
    pub fn is_non_convergence(&self) -> bool {
        match self {
            Error::NoConvergence { .. } => true,
            Error::Lspi { source, .. } | Error::StateLp { source, .. } => {
                source.is_non_convergence()
            }
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
