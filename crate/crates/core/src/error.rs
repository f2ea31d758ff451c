use std::path::PathBuf;

/// Errors raised anywhere in the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic {found:?}, expected \"HVNE\"")]
    BadMagic { path: PathBuf, found: [u8; 4] },

    #[error("{path}: unsupported format version {found} (dtype {dtype})")]
    VersionMismatch { path: PathBuf, found: u32, dtype: u8 },

    #[error("{path}: truncated payload, expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("non-finite value at flat offset {offset}")]
    NonFinite { offset: usize },

    #[error("invalid matrix shape {rows}x{dim}")]
    EmptyShape { rows: usize, dim: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("{path}:{line}: malformed record: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("duplicate page {doc_id}#{page_index}")]
    DuplicatePage { doc_id: String, page_index: usize },

    #[error("unknown page {doc_id}#{page_index}")]
    UnknownPage { doc_id: String, page_index: usize },

    #[error("invalid layout box: {0}")]
    Layout(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("all-false key mask")]
    DegenerateMask,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("corpus has no VS-page embeddings; add pooled_path to every vs_pages record")]
    MissingVsEmbeddings,

    #[error("render failed: {0}")]
    Render(String),

    #[error("unknown retrieval method {0:?}")]
    UnknownMethod(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
