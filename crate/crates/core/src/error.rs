use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed byte-fallback token {0:?}: payload must be two hex digits")]
    MalformedByteToken(String),

    #[error("duplicate token {token:?} at ids {first} and {second}")]
    DuplicateToken { token: String, first: u32, second: u32 },

    #[error("id {id} assigned to both {first:?} and {second:?}")]
    DuplicateId { id: u32, first: String, second: String },

    #[error("id range has a gap: id {missing} is unassigned")]
    IdGap { missing: u32 },

    #[error("special id {id} is out of range for a vocabulary of size {size}")]
    InvalidSpecial { id: u32, size: usize },

    #[error("token id {id} is out of range for a vocabulary of size {size}")]
    InvalidId { id: u32, size: usize },

    #[error("text is not encodable: no token covers byte 0x{byte:02X} at offset {offset}")]
    Unencodable { byte: u8, offset: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("brute-force alignment refuses n + m = {0} (limit 12)")]
    SizeBound(usize),

    #[error("span length must be at least 1")]
    ZeroLength,

    #[error("not a probability vector: {0}")]
    NotADistribution(String),

    #[error("projection carries no mass for this input (total {0:e})")]
    UnusableProjection(f64),

    #[error("student mass on the truncated support is {0:e}; KL is degenerate")]
    DegenerateSupport(f64),

    #[error("log of zero: {0}")]
    LogOfZero(String),

    #[error("no loss-bearing chunks to aggregate")]
    NoChunks,

    #[error("chunk {0} is excluded from the loss and has no distribution")]
    ChunkExcluded(usize),

    #[error("teacher {0:?} has no loss-bearing chunks")]
    TeacherWithoutChunks(String),

    #[error("confidence grids do not match: {0}")]
    MismatchedGrid(String),

    #[error("unknown coverage category {0:?}")]
    UnknownCategory(String),

    #[error("vocabulary hash mismatch for {what}: expected {expected}, found {found}")]
    VocabHashMismatch { what: String, expected: String, found: String },

    #[error("teacher {0:?} uses a cross-tokenizer mode but has no projection")]
    MissingProjection(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("projection file content hash mismatch: header {expected}, computed {found}")]
    HashMismatch { expected: String, found: String },

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format { path: path.into(), message: message.to_string() }
    }

    /// True for failures reading or writing the filesystem, as opposed to
    /// validation failures on well-formed input.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
