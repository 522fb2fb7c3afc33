/// Errors shared across the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("observation {value} is outside the support of the {kind} distribution")]
    OutOfSupport { kind: &'static str, value: f64 },

    #[error("KL divergence is infinite for the given pair of distributions")]
    InfiniteDivergence,

    #[error("tilt parameter {gamma} lies outside the essential domain")]
    GammaOutsideDomain { gamma: f64 },

    #[error("scenario requires at least {needed} channels, got {got}")]
    TooFewChannels { needed: usize, got: usize },

    #[error("scenario is limited to {limit} channels, got {got}")]
    TooManyChannels { limit: usize, got: usize },

    #[error("invalid two-sided parameters: {0}")]
    InvalidTwoSided(String),

    #[error("unknown hypothesis label `{0}`")]
    UnknownHypothesis(String),

    #[error("threshold must be positive, got {0}")]
    InvalidThreshold(f64),

    #[error("horizon must be at least 1")]
    InvalidHorizon,

    #[error("initial statistic value {value} is outside [0, {threshold}]")]
    InitialValueOutOfRange { value: f64, threshold: f64 },

    #[error("cumulant generating function of pair (wrong={wrong}, true={truth}) has no positive root below {limit}")]
    NoPositiveRoot { wrong: usize, truth: usize, limit: f64 },

    #[error("no misidentification bound available for pair (wrong={wrong}, true={truth}): the true hypothesis is closer to the wrong one than to the pre-change density")]
    NoBoundAvailable { wrong: usize, truth: usize },

    #[error("operation requires a {expected} scenario")]
    WrongScenario { expected: &'static str },

    #[error("enumeration would visit {states} outcome sequences; the limit is {limit}")]
    EnumerationTooLarge { states: u128, limit: u128 },

    #[error("exact enumeration requires Bernoulli channels")]
    EnumerationNotDiscrete,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
