use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid POMDP: {0}")]
    InvalidPomdp(String),
    #[error("unknown fixture `{0}` (expected TB1, TB2 or GRIDNOISE)")]
    UnknownFixture(String),
    #[error("inconsistent sizes: {0}")]
    Sizes(String),
    #[error("no non-redundant reward table found after {attempts} resamples")]
    RedundancyResampling { attempts: usize },
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),
    #[error("observation {observation} has zero probability under action {action} (normaliser {normalizer:e})")]
    ZeroProbabilityObservation {
        action: usize,
        observation: usize,
        normalizer: f64,
    },
    #[error("belief-MDP node cap of {cap} exceeded while expanding frontier depth {depth}")]
    NodeOverflow { cap: usize, depth: usize },
    #[error("emission is not invertible; use the belief-level check instead")]
    NonInvertibleEmission,
    #[error("estimator: {0}")]
    Estimator(String),
    #[error("exhaustive search limited to |O| <= {limit}, got {observations}")]
    SearchTooLarge { observations: usize, limit: usize },
    #[error("world model: {0}")]
    Model(String),
    #[error("no episodes supplied")]
    EmptyData,
    #[error("training diverged at step {step}: loss worsened for {window} consecutive steps (step size {step_size})")]
    Diverged {
        step: usize,
        window: usize,
        step_size: f64,
    },
    #[error("mutual information needs a positive total count")]
    ZeroTotal,
    #[error("invalid count table: {0}")]
    InvalidCounts(String),
    #[error("config: {0}")]
    Config(String),
    #[error("seed {seed}, stage `{stage}`: {source}")]
    Stage {
        seed: u64,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn at_stage(self, seed: u64, stage: &'static str) -> Self {
        Error::Stage {
            seed,
            stage,
            source: Box::new(self),
        }
    }
}
