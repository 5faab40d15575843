//! Crate-wide error type.

use crate::network::ValidationReport;
use crate::NodeId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric within tolerance")]
    NotSymmetric,

    #[error("matrix is not positive semidefinite within tolerance")]
    NotPositiveSemidefinite,

    #[error("matrix contains a non-finite entry")]
    NonFinite,

    #[error("state dimension must be at least 1")]
    EmptyDimension,

    #[error("covariance matrix is singular")]
    SingularCovariance,

    #[error("precision matrix is singular")]
    SingularPrecision,

    #[error("combined potential is singular; no proper posterior exists")]
    SingularCombination,

    #[error("innovation covariance is singular")]
    SingularInnovationCovariance,

    #[error("prior covariance is singular; information update undefined")]
    SingularPriorCovariance,

    #[error("unknown node `{0}`")]
    UnknownNode(NodeId),

    #[error("duplicate node `{0}`")]
    DuplicateNode(NodeId),

    #[error("duplicate link `{from}` -> `{to}`")]
    DuplicateLink { from: NodeId, to: NodeId },

    #[error("node `{0}` carries evidence")]
    HasEvidence(NodeId),

    #[error("node `{0}` carries no evidence")]
    NoEvidence(NodeId),

    #[error("node `{node}` cannot be removed: {reason}")]
    NotRemovable { node: NodeId, reason: String },

    #[error("invalid cluster: {0}")]
    ClusterInvalid(String),

    #[error("cannot reduce at node `{node}`: {reason}")]
    UnsupportedReduction { node: NodeId, reason: String },

    #[error("missing message from `{from}` to `{to}`")]
    IncompleteMailbox { from: NodeId, to: NodeId },

    #[error("sequence length mismatch: expected {expected}, got {got}")]
    SequenceMismatch { expected: usize, got: usize },

    #[error("network failed validation:\n{0}")]
    InvalidNetwork(ValidationReport),
}
