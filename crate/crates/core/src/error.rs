use alloc::boxed::Box;
use alloc::string::String;

use nalgebra::DVector;
use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Details of a local NLP solve that did not reach its KKT tolerance.
#[derive(Debug, Clone)]
pub struct LocalFailure {
    pub agent: Option<usize>,
    pub iterations: usize,
    pub residual: f64,
    pub reason: &'static str,
    pub last_iterate: DVector<f64>,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("consensus row {row} has no assigned agent")]
    OrphanConsensusRow { row: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error(
        "local solve failed (agent {:?}): {} after {} iterations, KKT residual {:e}",
        .0.agent, .0.reason, .0.iterations, .0.residual
    )]
    LocalSolveFailure(Box<LocalFailure>),

    #[error("active Jacobian of agent {agent} has rank {rank} < {rows} rows (LICQ violated)")]
    RankDeficientActiveJacobian { agent: usize, rank: usize, rows: usize },

    #[error("reduced Hessian of agent {agent} could not be factorized")]
    SingularReducedHessian { agent: usize },

    #[error("coordination KKT matrix is singular")]
    SingularKkt,

    #[error("condensed coordination matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("consensus row {row} is {degree}-assigned; a 2-assigned problem is required")]
    NotTwoAssigned { row: usize, degree: usize },

    #[error("non-positive curvature {curvature:e} in CG iteration {iteration}")]
    IndefiniteDetected { iteration: usize, curvature: f64 },

    #[error("local ADMM system of agent {agent} could not be factorized")]
    SingularLocalSystem { agent: usize },

    #[error("message addressed to unknown agent {id}")]
    UnknownAgent { id: usize },

    #[error("infeasible configuration: {0}")]
    InfeasibleConfig(String),
}

impl Error {
    /// Attach an agent index to errors raised by agent-agnostic routines.
    pub fn for_agent(self, agent: usize) -> Self {
        match self {
            Error::LocalSolveFailure(mut f) => {
                f.agent = Some(agent);
                Error::LocalSolveFailure(f)
            }
            Error::RankDeficientActiveJacobian { rank, rows, .. } => {
                Error::RankDeficientActiveJacobian { agent, rank, rows }
            }
            Error::SingularReducedHessian { .. } => Error::SingularReducedHessian { agent },
            Error::SingularLocalSystem { .. } => Error::SingularLocalSystem { agent },
            other => other,
        }
    }
}
