use crate::lca::GroupDescriptor;

/// Every failure the library reports. Numerical contracts that cannot be met
/// are surfaced here instead of being clipped.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("descriptor mismatch: expected {expected}, found {found}")]
    DescriptorMismatch {
        expected: GroupDescriptor,
        found: GroupDescriptor,
    },
    #[error("quadrature step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("degenerate window: {0}")]
    DegenerateWindow(String),
    #[error("step {step} does not divide window width {width}")]
    StepDoesNotDivide { step: f64, width: f64 },
    #[error("nearest-point search needs {candidates} candidates, above the limit {limit}")]
    SearchRadiusOverflow { candidates: f64, limit: usize },
    #[error("generators do not describe a closed subgroup: {0}")]
    NotClosed(String),
    #[error("window list is empty")]
    EmptyWindowList,
    #[error("windows are not nested increasing")]
    WindowsNotNested,
    #[error("net of {0} samples exceeds the sampling limit")]
    NetTooLarge(usize),
    #[error("section denominator {value} underflows at {at:?}; widen the bump")]
    DenominatorUnderflow { value: f64, at: Vec<f64> },
    #[error("coverage violation: {0}")]
    CoverageViolation(String),
    #[error("method not applicable: {0}")]
    MethodNotApplicable(String),
    #[error("no certified Fell convergence supplied for the subgroup family")]
    MissingFellCertificate,
    #[error("point outside space: {0}")]
    OutsideSpace(String),
    #[error(
        "preimage resolution too coarse: inner/outer gap {gap} exceeds 10% of outer volume {outer}"
    )]
    ResolutionTooCoarse { gap: f64, outer: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("missing declared fact `{0}`")]
    MissingDeclaredFact(String),
    #[error("S_z not compact")]
    StabilizerNotCompact,
    #[error("neighborhood too small for smoothing ramps: {0}")]
    NeighborhoodTooSmall(String),
    #[error("index range too short: {0}")]
    IndexRangeTooShort(String),
    #[error("kernel asymmetry {0} exceeds tolerance")]
    KernelAsymmetry(f64),
    #[error("inconsistent multiplicity sandwich: {0}")]
    InconsistentSandwich(String),
    #[error("no stage schedule satisfies the measure inequalities")]
    NoStageSchedule,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
