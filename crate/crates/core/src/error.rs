use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shapes, counts, ranges).
    #[error("contract violation in {op}: {detail}")]
    Contract { op: &'static str, detail: String },

    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in {stage} at frame {frame}")]
    NonFinite { stage: &'static str, frame: usize },

    #[error("non-finite activation in message-passing layer {layer}")]
    NonFiniteActivation { layer: usize },

    #[error("training diverged in episode {episode}, frame {frame}: {detail}")]
    Training {
        episode: usize,
        frame: usize,
        detail: String,
    },

    #[error("metric {0} is undefined for the given inputs")]
    UndefinedMetric(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Contract {
            op,
            detail: detail.into(),
        }
    }
}
