use thiserror::Error;

/// Errors raised anywhere in the search pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("numeric overflow in {op}: non-finite value produced")]
    NumericOverflow { op: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("edge {edge} has no unmasked operation")]
    EmptyEdge { edge: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("ranking function {ranker} scored the current space as zero")]
    ZeroRanking { ranker: String },

    #[error("fitness table has no entry for genotype {key}")]
    MissingFitness { key: String },

    #[error("enumeration refused: space holds {count} architectures, cap is {cap}")]
    CapExceeded { count: String, cap: usize },

    #[error("format error in {what}: expected {expected}, found {actual}")]
    Format {
        what: String,
        expected: String,
        actual: String,
    },

    #[error("malformed file {what}: {reason}")]
    Malformed { what: String, reason: String },

    #[error("training diverged at epoch {epoch}, batch {batch} (last checkpoint: {checkpoint})")]
    Diverged {
        epoch: usize,
        batch: usize,
        checkpoint: String,
    },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wrap with location context (cell, edge, batch...).
    pub fn context(self, context: impl Into<String>) -> Error {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, with context layers peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self.root(), Error::NumericOverflow { .. } | Error::Diverged { .. })
    }

    pub fn is_data(&self) -> bool {
        matches!(
            self.root(),
            Error::Format { .. }
                | Error::Malformed { .. }
                | Error::MissingFitness { .. }
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
