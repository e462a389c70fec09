use thiserror::Error;

/// Errors produced anywhere in the planning and simulation pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A geometric construction is degenerate.
    #[error("geometry error: {0}")]
    Geometry(String),
    /// No corridor connects the terminals at the configured resolution.
    #[error("planning failure: no corridor found after exploring {explored} spheres")]
    PlanningFailure { explored: usize },
    /// Invalid configuration value.
    #[error("configuration error: {0}")]
    Config(String),
    /// A segment collapsed to zero length.
    #[error("degenerate segment {segment}: zero chord length")]
    DegenerateSegment { segment: usize },
    /// The spatial problem has no feasible solution.
    #[error("spatial problem infeasible at segment {segment}: {reason}")]
    SpatialInfeasible { segment: usize, reason: String },
    /// The linear program is infeasible; `certificate` is a Farkas ray.
    #[error("linear program infeasible")]
    LpInfeasible { certificate: Vec<f64> },
    /// Solver reached a state that should be impossible for well-posed input.
    #[error("internal solver error: {0}")]
    Internal(String),
    /// Inputs that should fit together do not.
    #[error("assembly error: {0}")]
    Assembly(String),
    /// A simplex in parameter space has affinely dependent vertices.
    #[error("degenerate simplex: {0}")]
    DegenerateSimplex(String),
    /// Partition recursion cap reached.
    #[error("partition budget exhausted at depth {depth}; worst residual error {worst_error}")]
    Budget { depth: usize, worst_error: f64 },
    /// An infeasible parameter inside a region that should be convex-feasible.
    #[error("feasibility hole at theta {theta:?}")]
    FeasibilityHole { theta: Vec<f64> },
    /// A start point is not a convex combination of the boundary starts.
    #[error("assignment error: start {index} lies {distance} m outside the boundary hull")]
    Assignment { index: usize, distance: f64 },
    /// Stored artifact failed its integrity check.
    #[error("integrity error: {0}")]
    Integrity(String),
    /// Input file does not match the expected schema.
    #[error("schema error: {0}")]
    Schema(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
