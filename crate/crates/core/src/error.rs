//! Error taxonomy shared by the field and circuit layers.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Grid construction rejected the input (non-positive spacing, too few
    /// nodes along an axis, inconsistent array lengths).
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    /// Material data rejected (negative property, wrong array length).
    #[error("invalid material: {0}")]
    InvalidMaterial(String),

    /// A geometric quantity of a phantom edge was requested.
    #[error("edge {0} is a phantom edge")]
    PhantomEdge(usize),

    /// The linearized resistivity law left the physical range
    /// (1 + alpha (T - T0) <= 0) for a conducting cell.
    #[error("non-physical resistivity in cell {cell}: 1 + alpha dT = {factor} at dT = {delta_t} K")]
    NonphysicalResistivity {
        cell: usize,
        factor: f64,
        delta_t: f64,
    },

    /// A branch resistance was requested for an edge with zero conductance.
    #[error("edge {0} has zero conductance, branch resistance is undefined")]
    OpenBranch(usize),

    /// A behavioral card evaluated to a value outside its physical range,
    /// such as a non-positive or non-finite resistance.
    #[error("behavioral card {name} evaluated to nonphysical value {value:e}")]
    NonphysicalBranch { name: String, value: f64 },

    /// Vector or matrix dimensions do not match.
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    /// A sparse factorization failed or the system has no unique solution.
    #[error("singular system: {0}")]
    SingularSystem(String),

    /// Newton iteration exhausted its budget.
    #[error("no convergence at t = {t:.6e} s: residual {residual:.3e} after {iterations} iterations")]
    NoConvergence {
        t: f64,
        residual: f64,
        iterations: usize,
    },

    /// Netlist generation needs at least one electric Dirichlet node.
    #[error("no electric Dirichlet node: the extracted circuit would float")]
    MissingGround,

    /// Netlist text could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Scenario file rejected.
    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Parse error helper carrying the 1-based source line.
    pub fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
