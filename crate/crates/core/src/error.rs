use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid target, schedule, or experiment configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument outside an operation's domain (negative time, empty batch, ...).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// The rejection sampler exhausted its proposal cap without a single acceptance.
    #[error("restricted Gaussian oracle starved at t={t}: {proposals_used} proposals, no acceptance")]
    RgoStarved { t: f64, proposals_used: u64 },

    /// A diffusion run stopped early; `partial` holds the states reached so far.
    #[error("run aborted at step {step} (t={t}, state {state:?}, {proposals_used} proposals): {source}")]
    RunAborted {
        step: usize,
        t: f64,
        state: Vec<f64>,
        proposals_used: u64,
        source: Box<Error>,
        partial: Box<crate::diffuser::SampleBatch>,
    },

    /// The operation needs analytic structure (closed-form scores, an exact sampler)
    /// that the target does not carry.
    #[error("unsupported target: {0}")]
    UnsupportedTarget(String),

    /// A ground-truth proposal failed to dominate the target density.
    #[error("proposal does not dominate the target at {witness:?} (log ratio {log_ratio})")]
    DominationViolation { witness: Vec<f64>, log_ratio: f64 },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
