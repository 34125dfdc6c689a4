use thiserror::Error;

/// Best-effort result of an inverse-kinematics solve that missed its tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct IkFailure {
    pub best_angles: Vec<f64>,
    pub position_error_m: f64,
    pub angle_error_deg: f64,
    pub iterations: usize,
    pub residual_trace: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("signal has no samples")]
    EmptySignal,
    #[error("signal of {len} samples is shorter than the {n_fft}-sample analysis window")]
    SignalTooShort { len: usize, n_fft: usize },
    #[error("invalid STFT configuration: {0}")]
    InvalidStft(String),
    #[error("analysis/synthesis windows with hop {hop} do not satisfy constant overlap-add")]
    NotCola { hop: usize },
    #[error("invalid signal: {0}")]
    InvalidSignal(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("source coincides with microphone {mic}")]
    ZeroDistance { mic: usize },
    #[error("{0} is silent on the reference channels")]
    Silent(&'static str),
    #[error("matrix is singular beyond diagonal-loading recovery")]
    Singular,
    #[error("{degenerate} of {total} frequency bins have a degenerate MVDR trace")]
    DegenerateMasks { degenerate: usize, total: usize },
    #[error("localization subset needs at least two channels, got {0}")]
    SubsetTooSmall(usize),
    #[error("channel {channel} out of range 1..={channels}")]
    InvalidChannel { channel: usize, channels: usize },
    #[error("joint {joint} angle {angle} rad outside limits [{lower}, {upper}]")]
    JointLimit {
        joint: usize,
        angle: f64,
        lower: f64,
        upper: f64,
    },
    #[error(
        "target unreachable: {:.1} mm / {:.2} deg residual after {} iterations",
        .0.position_error_m * 1e3,
        .0.angle_error_deg,
        .0.iterations
    )]
    Unreachable(Box<IkFailure>),
    #[error("invalid kinematic chain: {0}")]
    InvalidChain(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("weights must be positive with a non-zero total")]
    InvalidWeights,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
