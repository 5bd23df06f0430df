use thiserror::Error;

use crate::tree::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("node {node} would get zero children")]
    EmptyBranching { node: NodeId },
    #[error("tree would exceed the node cap of {cap}")]
    SizeLimit { cap: usize },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("depth {depth} outside [0, {steps}]")]
    DepthOutOfRange { depth: usize, steps: usize },
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("payoff table `{table}` has no entry for node {node}")]
    MissingTableEntry { table: &'static str, node: NodeId },
    #[error("lower payoff {lower} exceeds upper payoff {upper} at node {node}")]
    PayoffOrder {
        node: NodeId,
        lower: f64,
        upper: f64,
    },
    #[error("payoff {what} is not finite at node {node}")]
    NonFinitePayoff { what: &'static str, node: NodeId },
    #[error("payoff bound violated at leaf {leaf} (tau={tau}, gamma={gamma}): slack {slack}")]
    BoundViolated {
        leaf: NodeId,
        tau: usize,
        gamma: usize,
        slack: f64,
    },

    #[error("node {node} has an empty kernel menu")]
    EmptyMenu { node: NodeId },
    #[error("invalid kernel at node {node}: {reason}")]
    InvalidKernel { node: NodeId, reason: String },
    #[error("policy is missing or out of range at node {node}")]
    IncompletePolicy { node: NodeId },
    #[error("{what}: {count} exceeds the cap of {cap}")]
    EnumerationTooLarge {
        what: &'static str,
        count: u128,
        cap: u128,
    },
    #[error("node {node} appears in more than one pasting set")]
    OverlappingPartition { node: NodeId },
    #[error("pasting node {node} has depth {found}, expected {expected}")]
    DepthMismatch {
        node: NodeId,
        expected: usize,
        found: usize,
    },

    #[error("submartingale property violated at node {node}: slack {violation}")]
    SubmartingaleViolated { node: NodeId, violation: f64 },
    #[error(
        "tau* is not optimal: gap {gap} (witness gamma #{gamma_index}, policy #{policy_index})"
    )]
    OptimalityViolated {
        gap: f64,
        gamma_index: u64,
        policy_index: u64,
    },
    #[error("saddle point violated: max deviation {max_dev} ({witness})")]
    SaddleViolated { max_dev: f64, witness: String },

    #[error("control {u} violates |u| <= kappa = {kappa}")]
    InvalidControl { u: f64, kappa: f64 },
    #[error("invalid SDE generator: {0}")]
    InvalidSde(String),

    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("validation error at `{path}`: {message}")]
    Validation { path: String, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
