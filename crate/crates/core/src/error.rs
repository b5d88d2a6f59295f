use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("index out of range: {what} = {index} (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    SampleRateMismatch(u32, u32),

    #[error("channel layout: {0}")]
    ChannelLayout(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("signal too short: {samples} samples, need at least {needed}")]
    SignalTooShort { samples: usize, needed: usize },

    #[error("feature dimension mismatch: model {model}, features {features}")]
    DimensionMismatch { model: usize, features: usize },

    #[error("word {word} appears {count} time(s) in the training set, need at least {needed}")]
    MissingCoverage {
        word: u8,
        count: usize,
        needed: usize,
    },

    #[error("degenerate training data: {0}")]
    DegenerateData(String),

    #[error("no model for word {0} in the acoustic model")]
    UnknownWord(u8),

    #[error("target rate not crossed in any row")]
    NotFound,

    #[error("approximation did not converge within {0} probes")]
    NonConvergence(usize),

    #[error("adaptive search exceeded the safety cap of {0} region updates")]
    SafetyCapExceeded(usize),

    #[error("no cached recording for {0}")]
    MissingRecording(String),

    #[error("external device: {0}")]
    Device(String),

    #[error("external device timed out after {0:?}")]
    Timeout(std::time::Duration),

    #[error("no impulse detected above the noise floor")]
    NoImpulse,

    #[error("scenario mismatch: {0}")]
    ScenarioMismatch(String),

    #[error("config: {0}")]
    Config(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
