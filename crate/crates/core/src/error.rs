use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate channel {channel}: zero variance in training split")]
    DegenerateChannel { channel: usize },

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("negative input value {value} at flat index {index}")]
    NegativeValue { index: usize, value: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("bad magic {found:?}, expected \"STDG\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported container version {found}")]
    UnsupportedVersion { found: u32 },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("malformed container: {0}")]
    Malformed(String),

    #[error("simulation blow-up at step {step}")]
    SimulationBlowUp { step: u64 },

    #[error("non-finite loss {loss} at sigma {sigma}")]
    NonFiniteLoss { loss: f64, sigma: f64 },

    #[error("training diverged at step {step}; last good state retained")]
    Diverged { step: u64 },

    #[error("non-finite guidance at sigma {sigma} (gradient norm {norm})")]
    NonFiniteGuidance { sigma: f64, norm: f64 },

    #[error("non-finite sampler state at step {step}, stage {stage}")]
    NonFiniteSample { step: usize, stage: &'static str },

    #[error("rollout failed at frame {frame}: {source}")]
    Rollout {
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("dataset too short: {frames} frames, need at least {required}")]
    DatasetTooShort { frames: usize, required: usize },

    #[error("degenerate distribution in Hovmoeller row {row}")]
    DegenerateDistribution { row: usize },

    #[error("degenerate forecast: zero skill")]
    DegenerateForecast,

    #[error("rank deficiency: {rank} significant modes, {requested} requested")]
    RankDeficient { rank: usize, requested: usize },

    #[error("missing data: {0}")]
    Missing(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
