use std::path::PathBuf;

use curvprobe_tensor::TensorError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { path: PathBuf, found: u32, expected: u32 },

    #[error("{path}: truncated file, expected {expected} bytes but found {found}")]
    Truncated { path: PathBuf, expected: u64, found: u64 },

    #[error("{path}: label {label} at record {index} is out of range for {num_classes} classes")]
    LabelOutOfRange {
        path: PathBuf,
        index: usize,
        label: usize,
        num_classes: usize,
    },

    #[error("dataset format error: {0}")]
    DatasetFormat(String),

    #[error("checkpoint: bad magic bytes {0:?}")]
    CheckpointMagic([u8; 4]),

    #[error("checkpoint: unsupported format version {found} (this build reads {supported})")]
    CheckpointVersion { found: u32, supported: u32 },

    #[error("checkpoint: corrupt header: {0}")]
    CheckpointHeader(String),

    #[error("checkpoint: parameter {name} has shape {found:?}, architecture expects {expected:?}")]
    ParamShape {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("checkpoint: {0}")]
    CheckpointContents(String),

    #[error("input shape {found:?} does not match model input {expected:?}")]
    InputShape { found: Vec<usize>, expected: Vec<usize> },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("requested {requested} samples from a dataset of {available}")]
    SubsetTooLarge { requested: usize, available: usize },

    #[error("sample is misclassified (label {label}, predicted {predicted}); travel requires a correct start")]
    Misclassified { label: usize, predicted: usize },

    #[error("input gradient is identically zero")]
    ZeroGradient,

    #[error("input gradient contains non-finite values")]
    NonFiniteGradient,

    #[error("could not draw a direction orthogonal to the FGSM direction after {0} attempts")]
    DegenerateOrthogonalization(usize),

    #[error("training diverged at epoch {epoch} (loss {loss}); last good checkpoint is epoch {last_good_epoch}")]
    Divergence {
        epoch: usize,
        loss: f32,
        last_good_epoch: usize,
    },

    #[error("{0}: empty input")]
    Empty(&'static str),

    #[error("calibration: confidence {0} outside (0, 1]")]
    ConfidenceRange(f64),

    #[error("incomplete training log: {0}")]
    IncompleteLog(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
