use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("gate threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("target {target} out of range for {classes} classes")]
    InvalidTarget { target: usize, classes: usize },

    #[error("bad IDX magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { found: u32, expected: u32 },

    #[error("truncated IDX payload: header declares {declared} bytes, file holds {available}")]
    Truncated { declared: usize, available: usize },

    #[error("IDX dimensions overflow: {0}")]
    DimensionOverflow(String),

    #[error("event channel {channel} out of range for {channels} channels")]
    ChannelOutOfRange { channel: usize, channels: usize },

    #[error("malformed event line {line}: {reason}")]
    MalformedEvent { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: String, got: String) -> Self {
        Error::Shape { context, expected, got }
    }
}
