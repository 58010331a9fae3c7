use thiserror::Error;

/// Errors surfaced by the solver modules.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("grid too small: boundary Maxwellian mass {mass:.3e} exceeds 1e-10 at v_max = {v_max}")]
    BoundaryMass { mass: f64, v_max: f64 },

    #[error("eigensolver failure: {0}")]
    Eigen(String),

    #[error("singular linear solve: {0}")]
    SingularSolve(String),

    #[error("spectral gap collapse at eta = {eta:.6}: top two real parts within {gap:.3e}")]
    GapCollapse { eta: f64, gap: f64 },

    #[error("fixed point iteration did not converge after {0} iterations")]
    FixedPointDiverged(usize),

    #[error("discretization defect: {0}")]
    DiscretizationDefect(String),

    #[error("resolution cap exceeded: {0} grid points per axis (cap {1})")]
    ResolutionCap(usize, usize),

    #[error("finite-speed non-wrap violation: 2*M*t_max = {reach:.3} >= 0.8*l_x = {budget:.3}")]
    NonWrap { reach: f64, budget: f64 },

    #[error("missing eigendata for long-wave mode eta = {0:?}")]
    MissingEigenData(Vec<f64>),

    #[error("too few snapshots: need {need}, got {got}")]
    TooFewSnapshots { need: usize, got: usize },

    #[error("functional equivalence failure after {0} halvings of the coupling")]
    EquivalenceFailure(usize),

    #[error("spatial tail below noise floor: {0}")]
    TailUnresolved(String),

    #[error("nonpositive sample in log fit at index {0}")]
    NonPositiveSample(usize),

    #[error("missing upstream artifact: {0}")]
    MissingArtifact(String),

    #[error("output directory {0} already contains a run (use --force or a fresh directory)")]
    DirectoryNotEmpty(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
