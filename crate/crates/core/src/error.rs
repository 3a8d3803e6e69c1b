use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum PmmError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("duplicate row for subject '{subject}' at visit '{visit}'")]
    DuplicateRow { subject: String, visit: String },

    #[error("subject '{subject}' has no value for baseline covariate '{covariate}'")]
    IncompleteBaseline { subject: String, covariate: String },

    #[error("pattern violation for subject '{subject}': {reason}")]
    PatternViolation { subject: String, reason: String },

    #[error("pattern indicators have not been derived for this dataset")]
    IndicatorsMissing,

    #[error("design is rank deficient: {0}")]
    RankDeficient(String),

    #[error("EM did not converge after {iterations} iterations (last log-likelihood change {last_change:.3e})")]
    NotConverged { iterations: usize, last_change: f64 },

    #[error("covariance matrix is singular (minimum eigenvalue {min_eigenvalue:.3e})")]
    SingularCovariance { min_eigenvalue: f64 },

    #[error("arm {arm}: {count} retrieved dropouts available, at least {required} required")]
    InsufficientRetrievedDropouts { arm: usize, count: usize, required: usize },

    #[error("arm {arm}: no subjects match the filter of block {block}")]
    EmptyCell { arm: usize, block: String },

    #[error("arm {arm}: bread matrix of block {block} is singular")]
    SingularBread { arm: usize, block: String },

    #[error("analytic gradient disagrees with finite differences (max relative error {max_rel_err:.3e})")]
    GradientCheckFailed { max_rel_err: f64 },

    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    #[error("covariate covariance block is ill-conditioned (condition number {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("no tipping boundary: {0}")]
    NoBoundary(String),

    #[error("missingness is not monotone for subject '{subject}'")]
    NotMonotone { subject: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("arm {arm} has {arm_size} subjects, fewer than the retrieved-dropout target {target}")]
    InfeasibleTarget { arm: usize, arm_size: usize, target: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("study aborted: {failures} of {reps} replicates failed ({first_error})")]
    StudyAborted { failures: usize, reps: usize, first_error: String },
}

pub type Result<T> = std::result::Result<T, PmmError>;
