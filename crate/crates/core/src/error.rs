use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("layer geometry invalid: {0}")]
    InvalidSpec(String),

    #[error("output dimension is not integral: ({extent} - {filter}) is not divisible by stride {stride}")]
    NonIntegralDims {
        extent: usize,
        filter: usize,
        stride: usize,
    },

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("value {value} does not fit the {domain} container")]
    ValueOutOfDomain { value: i32, domain: &'static str },

    #[error("precision window ({msb},{lsb}) invalid for a {width}-bit container")]
    InvalidPrecision { msb: u8, lsb: u8, width: u8 },

    #[error("cannot trim negative value {0} in unsigned mode")]
    NegativeTrim(i32),

    #[error("negative value {0} cannot be encoded in unsigned mode")]
    NegativeUnsupported(i32),

    #[error("quantization range is degenerate: min {min} >= max {max}")]
    DegenerateRange { min: f64, max: f64 },

    #[error("empty trace")]
    EmptyTrace,

    #[error("no live lanes left to schedule")]
    AllDone,

    #[error("a precision profile is required for this engine configuration")]
    MissingProfile,

    #[error("engine configuration invalid: {0}")]
    InvalidConfig(String),

    #[error("column-synchronized schedule made no progress at cycle {cycle}")]
    DeadlockDetected { cycle: u64 },

    #[error("I/O error: {0}")]
    Io(String),

    #[error("layer {layer}: {engine} output differs from the reference convolution")]
    OracleMismatch { layer: String, engine: String },
}

impl Error {
    /// Process exit status: 2 for I/O, 3 for an oracle mismatch, 1 for
    /// everything else (configuration or data that fails validation).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 2,
            Error::OracleMismatch { .. } => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
