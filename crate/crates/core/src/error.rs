use thiserror::Error;

/// Errors raised while building datasets, estimating models, or running inference.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("outcome column `{column}` has non-binary value {value} in row {row}")]
    NonBinaryOutcome { column: String, row: usize, value: f64 },
    #[error("cluster column `{0}` has a single distinct value")]
    SingleCluster(String),
    #[error("missing or NaN value in column `{column}`, row {row}")]
    MissingValue { column: String, row: usize },
    #[error("column `{0}` is not numeric")]
    NonNumericColumn(String),
    #[error("dataset has {n} observations but {k} regressors")]
    TooFewObservations { n: usize, k: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("no constant column found")]
    NoConstantColumn,
    #[error("fixed-effect variable `{0}` needs at least two levels")]
    TooFewLevels(String),

    #[error("perfect classifier detected (direction {direction:?})")]
    Separation { direction: Vec<f64> },
    #[error("optimizer did not converge after {iterations} iterations (gradient {gradient:e})")]
    NonConvergence { iterations: usize, gradient: f64 },
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("matrix is singular")]
    SingularMatrix,
    #[error("information matrix is singular")]
    SingularInformation,
    #[error("Hessian matrix is singular")]
    SingularHessian,
    #[error("information matrix is singular when cluster {cluster} is omitted")]
    SingularSubsampleInformation { cluster: usize },
    #[error("I - A_g is not positive definite for cluster {cluster}")]
    NonPdAdjustment { cluster: usize },
    #[error("{dropped} of {clusters} delete-one subsamples were separated")]
    TooManyDropped { dropped: usize, clusters: usize },

    #[error("R V R' is singular")]
    SingularRvr,
    #[error("variance of the tested combination is zero")]
    ZeroVariance,
    #[error("unsupported restriction: {0}")]
    UnsupportedRestriction(String),
    #[error("bootstrap standard errors need an unrestricted bootstrap DGP")]
    RestrictedOrigin,
    #[error("standard error must be positive, got {0}")]
    NonPositiveSe(f64),
    #[error("{got} bootstrap replications are too few for level {level}")]
    TooFewReplications { got: usize, level: f64 },
    #[error("every bootstrap replication was degenerate")]
    AllDegenerate,

    #[error("cluster {0} would be empty")]
    EmptyCluster(usize),
    #[error("no intercept reaches the target mean {0}")]
    NoRoot(f64),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
