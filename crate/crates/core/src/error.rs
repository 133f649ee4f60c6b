use std::fmt;

use thiserror::Error;

use crate::synthesis::ConditionReport;

/// Standing assumptions a scenario has to satisfy before any of the
/// consensus conditions mean anything.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Assumption {
    /// A1: the agent pair (A, B) is stabilizable.
    Stabilizable,
    /// A3: the communication graph is undirected and connected.
    UndirectedConnected,
    /// A4: the leader roots a directed spanning tree and the followers
    /// talk over an undirected subgraph.
    LeaderSpanningTree,
}

impl fmt::Display for Assumption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Assumption::Stabilizable => write!(f, "assumption A1 (stabilizable agent dynamics)"),
            Assumption::UndirectedConnected => {
                write!(f, "assumption A3 (undirected and connected graph)")
            }
            Assumption::LeaderSpanningTree => {
                write!(f, "assumption A4 (leader-rooted spanning tree, undirected followers)")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("graph is disconnected (lambda_2 = {lambda2:.3e})")]
    DisconnectedGraph { lambda2: f64 },

    #[error("{assumption} violated: {detail}")]
    AssumptionViolated { assumption: Assumption, detail: String },

    #[error("iteration did not converge: {0}")]
    NonConvergence(String),

    #[error("the pair (A, B) is not stabilizable")]
    NotStabilizable,

    #[error("delta_sq = {delta_sq} is outside the admissible interval [{lower}, {upper})")]
    DeltaOutOfRange { delta_sq: f64, lower: f64, upper: f64 },

    #[error("Riccati iteration diverged after {iterations} iterations (|P| = {norm:.3e})")]
    Diverged { iterations: usize, norm: f64 },

    #[error("B^T P B = {value:.3e} is numerically singular")]
    SingularInnerTerm { value: f64 },

    #[error("consensus condition fails: max lhs {:.6} >= rhs {:.6}", .0.lhs_max, .0.rhs)]
    ConditionFails(Box<ConditionReport>),

    #[error("scenario: {0}")]
    Scenario(String),
}

impl Error {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DimensionMismatch(_)
            | Error::InvalidInput(_)
            | Error::InvalidTopology(_)
            | Error::DisconnectedGraph { .. }
            | Error::AssumptionViolated { .. }
            | Error::NotStabilizable
            | Error::Scenario(_) => 2,
            Error::ConditionFails(_) => 3,
            Error::NonConvergence(_)
            | Error::DeltaOutOfRange { .. }
            | Error::Diverged { .. }
            | Error::SingularInnerTerm { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
