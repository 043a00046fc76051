use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("sentence has no tokens")]
    EmptySentence,

    #[error("sentence {index}: {source}")]
    Sentence {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("degenerate batch: need at least 2 examples, got {0}")]
    DegenerateBatch(usize),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("not enough targets: need at least {needed}, corpus has {available}")]
    InsufficientTargets { needed: usize, available: usize },

    #[error("index input is empty")]
    EmptyInput,

    #[error("duplicate id {0}")]
    DuplicateId(usize),

    #[error("invalid partition count {partitions} (n_probe {n_probe}) for {vectors} vectors")]
    InvalidPartitionCount {
        partitions: usize,
        n_probe: usize,
        vectors: usize,
    },

    #[error("document {0:?} has no sentence positions")]
    UnknownDocument(String),

    #[error("no candidate documents for {0:?}")]
    NoCandidates(String),

    #[error("distractor pool is empty")]
    EmptyPool,

    #[error("predicted and gold key sets differ")]
    KeyMismatch,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("variance of an input is zero")]
    DegenerateVariance,

    #[error("unsupported format version {found} (max supported {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("training diverged at step {step}: loss is not finite (try a lower learning rate)")]
    Diverged { step: u64 },

    #[error("corrupt file: {0}")]
    CorruptFile(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn at_sentence(self, index: usize) -> Self {
        Error::Sentence {
            index,
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the failure was caused by the caller's inputs (bad files,
    /// bad configuration) rather than a defect in the pipeline itself.
    pub fn is_user_error(&self) -> bool {
        match self {
            Error::ConfigInvalid(_)
            | Error::EmptyCorpus
            | Error::InsufficientTargets { .. }
            | Error::VersionMismatch { .. }
            | Error::CorruptFile(_)
            | Error::Parse { .. }
            | Error::Io { .. }
            | Error::EmptySentence
            | Error::EmptyPool
            | Error::InvalidPartitionCount { .. }
            | Error::DuplicateId(_)
            | Error::Diverged { .. } => true,
            Error::Sentence { source, .. } => source.is_user_error(),
            _ => false,
        }
    }
}
