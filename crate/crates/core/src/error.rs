//! Crate-wide error type. One enum so every failure mode stays a distinct,
//! matchable value.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    // -- tensor -------------------------------------------------------------
    #[error("tensor dims must be non-empty with every dim >= 1, got {0:?}")]
    InvalidDims(Vec<usize>),

    #[error("tensor dims {dims:?} imply {expected} values, got {got}")]
    LengthMismatch {
        dims: Vec<usize>,
        expected: usize,
        got: usize,
    },

    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    // -- DCTF tensor files ----------------------------------------------------
    #[error("bad magic: expected \"DCTF\", found {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported DCTF version {0}")]
    UnsupportedVersion(u8),

    #[error("unsupported DCTF dtype {0} (only 1 = f32 little-endian)")]
    UnsupportedDtype(u8),

    #[error("reserved pad bytes must be zero, found {0:#06x}")]
    NonzeroPad(u16),

    #[error("truncated payload: expected {expected} bytes, got {got}")]
    TruncatedPayload { expected: usize, got: usize },

    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),

    // -- images ---------------------------------------------------------------
    #[error("cannot decode image {path}: {reason}")]
    ImageDecode { path: PathBuf, reason: String },

    #[error("unsupported image {path}: {reason} (8-bit RGB or grayscale PNG only)")]
    UnsupportedImage { path: PathBuf, reason: String },

    // -- manifests --------------------------------------------------------------
    #[error("malformed manifest entry #{index}: {reason}")]
    MalformedEntry { index: usize, reason: String },

    #[error("manifest path does not resolve: {0}")]
    DanglingPath(PathBuf),

    #[error("category id {id} out of range (category count {count})")]
    CategoryOutOfRange { id: usize, count: usize },

    // -- fitting / training -------------------------------------------------------
    #[error(
        "singular system: the normal matrix is rank deficient at alpha={alpha}; \
         use alpha > 0 to regularize"
    )]
    SingularSystem { alpha: f64 },

    #[error("R^2 undefined: every target dimension has zero variance")]
    UndefinedRSquared,

    #[error("non-finite loss at step {step} ({value})")]
    NonFiniteLoss { step: usize, value: f64 },

    #[error("training data has a single category; need at least 2")]
    SingleCategory,

    #[error("mixed categories in paired GAN data: {0} and {1}")]
    MixedCategories(usize, usize),

    #[error("no trained GAN for category {0} and fallback to coarse output is disabled")]
    UnknownCategory(usize),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("checkpoint at {path} is malformed: {reason}")]
    BadCheckpoint { path: PathBuf, reason: String },

    #[error("empty input: {0}")]
    EmptyInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(context: impl Into<String>, expected: &[usize], got: &[usize]) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }
}
