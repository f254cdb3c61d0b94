use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("need at least {required} arms, found {found}")]
    TooFewArms { found: usize, required: usize },

    #[error("arm {arm} (dose {dose}) has {n} subject(s); at least {required} required")]
    ArmTooSmall {
        arm: usize,
        dose: f64,
        n: usize,
        required: usize,
    },

    #[error("no placebo arm (dose 0) present")]
    MissingPlacebo,

    #[error("{what} is not finite")]
    NonFinite { what: String },

    #[error("two arms share dose {dose}")]
    DuplicateDose { dose: f64 },

    #[error("negative dose {dose}")]
    NegativeDose { dose: f64 },

    #[error("pooled variance undefined: total n {total} must exceed arm count {arms}")]
    InsufficientDegreesOfFreedom { total: usize, arms: usize },

    #[error("row {row}: {message}")]
    MalformedRow { row: usize, message: String },

    #[error("row {row}: arm {arm} has dose {found}, earlier rows gave {expected}")]
    InconsistentDose {
        row: usize,
        arm: usize,
        expected: f64,
        found: f64,
    },

    #[error("missing column: {0}")]
    MissingColumn(String),

    #[error("length mismatch: {what} has {found} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("pooled variance is zero with a non-degenerate contrast (constant data)")]
    ZeroVariance,

    #[error("permutation inference requires subject-level data")]
    SummaryOnly,

    #[error("at least {min} permutations required, got {got}")]
    TooFewPermutations { got: usize, min: usize },

    #[error("contrast {index} sums to {sum}, not zero")]
    ContrastNotZeroSum { index: usize, sum: f64 },

    #[error("invalid parameter for {model}: {message}")]
    InvalidParameter { model: &'static str, message: String },

    #[error("{model} needs at least {required} dose levels, got {found}")]
    TooFewPoints {
        model: &'static str,
        required: usize,
        found: usize,
    },

    #[error("no converged model fit")]
    NoConvergedFits,

    #[error("report has no {0} section")]
    MissingSection(&'static str),

    #[error("unknown scenario: {0}")]
    UnknownScenario(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
