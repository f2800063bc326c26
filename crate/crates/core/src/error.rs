use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate id \"{0}\"")]
    DuplicateId(String),

    #[error("image without caption: \"{0}\"")]
    ImageWithoutCaption(String),

    #[error("dangling id reference \"{id}\" in instance \"{qid}\"")]
    DanglingId { qid: String, id: String },

    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient instances: need {needed}, have {available}")]
    InsufficientInstances { needed: usize, available: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty candidate pool")]
    EmptyPool,

    #[error("gold set is empty")]
    EmptyGold,

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("vocabulary too small: {0}")]
    VocabularyTooSmall(String),

    #[error("missing score table entry for prefix {prefix:?} and candidate \"{candidate}\"")]
    MissingScore { prefix: Vec<String>, candidate: String },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("generator timeout")]
    GeneratorTimeout,

    #[error("generator returned status {0}")]
    GeneratorStatus(u16),

    #[error("bad generator payload")]
    BadGeneratorPayload,

    #[error("generator request failed: {0}")]
    GeneratorTransport(String),

    #[error("cannot access {}", path.display())]
    File {
        path: PathBuf,
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
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
