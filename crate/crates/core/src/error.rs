use thiserror::Error;

/// A single violated parameter constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamViolation {
    pub field: &'static str,
    pub message: String,
}

impl std::fmt::Display for ParamViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum MctouError {
    #[error("invalid parameters: {}", join(.0))]
    InvalidParams(Vec<ParamViolation>),

    #[error("evaluation time {t} is after maturity {maturity}")]
    TimeAfterMaturity { t: f64, maturity: f64 },

    #[error("contract list is empty")]
    EmptyContracts,

    #[error("invalid contract: {0}")]
    InvalidContract(String),

    #[error("duplicate maturity {maturity} (contracts {first} and {second})")]
    DuplicateMaturity {
        maturity: f64,
        first: String,
        second: String,
    },

    #[error("invalid portfolio: {0}")]
    InvalidPortfolio(String),

    #[error("invalid simulation grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("futures volatility loadings are rank deficient: contract {contract} is redundant")]
    RankDeficient { contract: String },

    #[error(
        "Sigma_F Sigma_F' is ill-conditioned (condition number {cond:.3e}); trade fewer contracts"
    )]
    IllConditioned { cond: f64 },

    #[error("unknown figure tag {0:?} (expected fig1, fig2, fig3 or fig4)")]
    UnknownFigure(String),

    #[error("parameter document: {0}")]
    Document(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl MctouError {
    /// True for failures of the linear algebra (rank, conditioning) rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            MctouError::RankDeficient { .. } | MctouError::IllConditioned { .. }
        )
    }
}

fn join(v: &[ParamViolation]) -> String {
    v.iter()
        .map(|p| p.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, MctouError>;
