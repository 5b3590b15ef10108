use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    DimensionMismatch { op: &'static str, detail: String },

    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },

    #[error("enumeration guard exceeded: {n} columns (limit {limit})")]
    GuardExceeded { n: usize, limit: usize },

    #[error("coverage impossible: {0}")]
    Coverage(String),

    #[error(
        "rejection budget exhausted after {draws} draws (acceptance rate {acceptance_rate:.4}, \
         predicted dominance probability {predicted:.4})"
    )]
    RejectionBudget {
        draws: usize,
        acceptance_rate: f64,
        predicted: f64,
    },

    #[error("target sparsity k_max = {k_max} exceeds achievable Kruskal rank {k}")]
    SparsityTooLarge { k_max: usize, k: usize },

    #[error("scene layout impossible: {0}")]
    Layout(String),

    #[error("zero signal: cannot scale noise to a finite SNR")]
    ZeroSignal,

    #[error("rank collapse after {picked} of {wanted} selections")]
    RankCollapse { picked: usize, wanted: usize },

    #[error("non-finite objective at iteration {0}")]
    NonFinite(usize),

    #[error("matrix is numerically singular: {0}")]
    Singular(String),

    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse {
        line: usize,
        column: usize,
        msg: String,
    },

    #[error("{0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(op: &'static str, detail: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            detail: detail.into(),
        }
    }
}
