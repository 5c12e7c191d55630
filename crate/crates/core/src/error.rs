use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes do not conform for the named op.
    #[error("dimension error in `{op}`: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A caller broke a documented precondition.
    #[error("contract violated: {0}")]
    Contract(String),

    /// A scalar argument lies outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },

    /// The loss became NaN or infinite; the batch seed allows replay.
    #[error("non-finite loss at iteration {iteration} (batch seed {batch_seed:#018x})")]
    NonFiniteLoss { iteration: usize, batch_seed: u64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Input data failed validation; `row` is 1-based when known.
    #[error("data error{}: {msg}", .row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    Data { row: Option<usize>, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("simulator timeouts exceeded budget: {timeouts} of {trials} trials hit t_max (limit {limit:.2}%)")]
    TimeoutBudget { timeouts: u64, trials: u64, limit: f64 },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn data(row: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Data { row, msg: msg.into() }
    }
}
