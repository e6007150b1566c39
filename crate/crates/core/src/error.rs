use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),

    #[error("ensemble has {0} model(s); at least 2 are required")]
    DegenerateEnsemble(usize),

    #[error("zero probability at model {model}, sample {sample}, class {class} with flooring disabled")]
    ZeroProbability {
        model: usize,
        sample: usize,
        class: usize,
    },

    #[error("operation requires the true conditional distribution")]
    MissingTruth,

    #[error("too few samples: {got} available, {need} required")]
    TooFewSamples { got: usize, need: usize },

    #[error("regressor has zero spread")]
    DegenerateX,

    #[error("residuals have zero variance")]
    ZeroVariance,

    #[error("overflow while evaluating {0}")]
    Overflow(&'static str),

    #[error("empty input")]
    EmptyInput,

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("member predictions must be one-hot (model {model}, sample {sample})")]
    OneHotRequired { model: usize, sample: usize },

    #[error("closed form is near its singularity: {0}")]
    NearSingular(String),

    #[error("quadrature did not converge: error estimate {estimate:e}")]
    QuadratureFailure { estimate: f64 },

    #[error("no manifest.json or predictions.csv in {0}")]
    ManifestMissing(PathBuf),

    #[error("size mismatch in {what}: expected {expected}, found {found}")]
    SizeMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("label {label} at sample {sample} is outside [0, {num_classes})")]
    LabelOutOfRange {
        sample: usize,
        label: i64,
        num_classes: usize,
    },

    #[error("row (model {model}, sample {sample}) is not a probability vector: sum {sum}")]
    SimplexViolation { model: usize, sample: usize, sum: f64 },

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("malformed record at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable process exit code for each error class.
    ///
    /// | code | class |
    /// |------|-------|
    /// | 3 | file system / manifest |
    /// | 4 | bundle or record validation |
    /// | 5 | numerical domain |
    /// | 6 | unmet precondition (truth, one-hot, parameters) |
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            Io { .. } | ManifestMissing(_) => 3,
            SizeMismatch { .. }
            | LabelOutOfRange { .. }
            | SimplexViolation { .. }
            | InvalidManifest(_)
            | Parse { .. }
            | Json(_)
            | NonFiniteInput(_) => 4,
            DegenerateEnsemble(_)
            | ZeroProbability { .. }
            | TooFewSamples { .. }
            | DegenerateX
            | ZeroVariance
            | Overflow(_)
            | EmptyInput
            | NearSingular(_)
            | QuadratureFailure { .. } => 5,
            MissingTruth | InvalidParam(_) | OneHotRequired { .. } => 6,
        }
    }
}
