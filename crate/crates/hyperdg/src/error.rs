use thiserror::Error;

/// Errors produced by mesh handling, projections, and solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh parse error at line {line}: {msg}")]
    MeshParse { line: usize, msg: String },

    #[error("mesh topology error: {0}")]
    Topology(String),

    #[error("element {element} does not have a unique outflow facet")]
    NoUniqueOutflow { element: usize },

    #[error("missing upwind trace on local facet {facet} of element {element}")]
    MissingUpwindTrace { element: usize, facet: usize },

    #[error("mesh is not admissible for an element sweep: {0}")]
    NotAdmissible(String),

    #[error("singular local system on element {element}")]
    SingularLocalSystem { element: usize },

    #[error("singular outflow-facet moment block at degree {degree}")]
    SingularFacetBlock { degree: usize },

    #[error(
        "iterative solver did not reach the target residual: final relative residual {residual:.3e} after {iterations} iterations"
    )]
    SolverDiverged {
        residual: f64,
        iterations: usize,
        history: Vec<f64>,
    },

    #[error("{0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
