use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("grid resolution {0} is below the minimum of 8")]
    Resolution(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("parameters violate the almost-calibrated constraint: {0}")]
    NotAlmostCalibrated(String),
    #[error("degenerate tangent frame at vertex {vertex}")]
    DegenerateFrame { vertex: usize },
    #[error("degenerate metric (det g = {det}) at vertex {vertex}")]
    DegenerateMetric { vertex: usize, det: f64 },
    #[error("Lagrangian angle unwrap failed between vertices {a} and {b} (jump {jump})")]
    AngleUnwrap { a: usize, b: usize, jump: f64 },
    #[error("angle branch mismatch between snapshots (max jump {0})")]
    BranchMismatch(f64),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("evaluation time {t} is not before the reference time {t0}")]
    TimeNotBeforeReference { t: f64, t0: f64 },
    #[error("cos theta = {cos_theta} <= 0 at vertex {vertex} inside the cutoff support; 1/cos theta weight undefined")]
    WeightUndefined { vertex: usize, cos_theta: f64 },
    #[error("trace has no singularity report")]
    NoSingularityReport,
    #[error("singular time estimate is unreliable: {0}")]
    UnreliableEstimate(String),
    #[error("requested time {0} lies outside the trace")]
    TimeOutsideTrace(f64),
    #[error("grid mismatch between consecutive samples")]
    GridMismatch,
    #[error("ball contains no sample points")]
    EmptyBall,
    #[error("not enough snapshots: need {needed}, have {have}")]
    NotEnoughSnapshots { needed: usize, have: usize },
    #[error("step limit of {0} exceeded before termination")]
    StepLimit(usize),
    #[error("operation requires complex dimension {expected}, got {got}")]
    Dimension { expected: String, got: usize },
    #[error("plane angles disagree: {0}")]
    AngleMismatch(String),
    #[error("unknown suite `{0}`")]
    UnknownSuite(String),
    #[error("oracle quadrature did not converge: {0}")]
    NonConvergent(String),
}
