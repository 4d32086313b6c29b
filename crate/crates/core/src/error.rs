use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Invalid parameters, mismatched layouts, unknown names.
    #[error("configuration error: {0}")]
    Config(String),

    /// A theorem-level precondition does not hold for the supplied arguments.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// An input the operation cannot handle (e.g. a zero matrix for Newton-Schulz).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// The objective became non-finite.
    #[error("divergence at step {step}: objective value {value}")]
    Divergence { step: usize, value: f64 },

    /// A runtime-asserted lemma failed along a trace.
    #[error("invariant '{lemma}' violated at step {step}: {detail}")]
    Invariant {
        lemma: &'static str,
        step: usize,
        detail: String,
    },

    /// A test oracle refused its input or detected an inconsistency.
    #[error("oracle error: {0}")]
    Oracle(String),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn invariant(lemma: &'static str, step: usize, detail: impl Into<String>) -> Self {
        Error::Invariant {
            lemma,
            step,
            detail: detail.into(),
        }
    }
}
