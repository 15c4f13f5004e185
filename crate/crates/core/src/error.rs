use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),

    #[error("value {value} lies outside the unit domain [0, 1]")]
    OutOfDomain { value: f64 },

    #[error("index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("degree {degree} too low: {needed}")]
    DegreeTooLow { degree: usize, needed: &'static str },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    /// All raw weights of an inner block are zero. `block` is the 1-based
    /// `(tree, level)` when known.
    #[error("degenerate inner weights{}: all raw weights are zero", describe_block(.block))]
    DegenerateWeights { block: Option<(usize, usize)> },

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("invalid coefficients: {0}")]
    InvalidCoefficients(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("feature {feature} is constant; min-max normalization needs max > min")]
    ConstantFeature { feature: String },

    #[error("unknown name `{0}`")]
    UnknownName(String),

    #[error("bad IDX magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { found: u32, expected: u32 },

    #[error("truncated file: {0}")]
    TruncatedFile(String),

    #[error("count mismatch: {0}")]
    CountMismatch(String),

    #[error("rejection sampling stalled: acceptance rate {rate:.2e} after {draws} draws")]
    RejectionStall { rate: f64, draws: u64 },

    #[error("unsupported checkpoint format `{found}`, expected `{expected}`")]
    VersionMismatch { found: String, expected: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("malformed document: {0}")]
    Format(String),

    #[error("sampler failed: {0}")]
    Sampler(String),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

fn describe_block(block: &Option<(usize, usize)>) -> String {
    match block {
        Some((t, l)) => format!(" in block (tree {t}, level {l})"),
        None => String::new(),
    }
}

pub(crate) fn check_unit(x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::OutOfDomain { value: x })
    }
}
