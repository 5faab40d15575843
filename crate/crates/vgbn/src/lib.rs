//! Exact Bayesian inference for singly-connected networks of vector Gaussian
//! variables.
//!
//! A network is a DAG in which every node holds a multivariate normal state
//! and every directed link is a linear map: a node `x` with parents `u_i`
//! satisfies `x = Σ Bᵢ uᵢ + v` for link matrices `Bᵢ` and independent
//! zero-mean Gaussian noise `v`.  Because everything is jointly Gaussian,
//! posterior marginals given evidence are available in closed form.
//!
//! The crate offers three independent routes to those posteriors:
//!
//! * [`propagation`] — decentralized message passing.  Each node exchanges
//!   moment-form `π` and information-form `λ` messages with its neighbours;
//!   on singly-connected (polytree) structures a single collect/distribute
//!   sweep yields every exact marginal.
//! * [`transform`] — centralized network reduction.  A sequence of joint
//!   preserving edits (parent removal, evidence absorption) shrinks the
//!   network until only the query node and its posterior remain.
//! * [`oracle`] — brute force.  Assemble the full joint Gaussian over all
//!   nodes and condition on the evidence directly.  Slowest, but a useful
//!   cross-check for the other two.
//!
//! [`kalman`] layers a discrete-time filter on top: a dynamic model unrolled
//! one slice at a time, with the measurement update performed either
//! centrally (gain form) or decentrally (information-form fusion of the
//! per-sensor messages).
//!
//! Core types are generic over the scalar via the [`Real`] trait; the
//! unqualified names default to `f64`, and `*32`/`*64` aliases are exported
//! at the crate root for when the parameter must be spelled out.

pub mod error;
pub mod gaussian;
pub mod kalman;
pub mod linalg;
pub mod network;
pub mod oracle;
pub mod propagation;
pub mod transform;

use std::fmt;

pub use error::{Error, Result};
pub use gaussian::{BlockLayout, Gaussian, InfoForm, JointGaussian};
pub use kalman::{
    FilterState, ModelSequence, Reading, Sensor, Simulation, StepData, SystemModel, UpdateMode,
};
pub use network::{LinkSpec, NetworkSpec, NodeKind, NodeSpec, ValidationReport};
pub use propagation::{BeliefTable, LambdaMessage, NodeLambda, PiMessage, Propagation};
pub use transform::{Reduction, TransformKind, TransformStep};

/// Scalar types the numerics run on: `f32`, `f64`, or anything else
/// implementing nalgebra's real-closed-field interface by value.
pub trait Real: nalgebra::RealField + Copy {}

impl<T: nalgebra::RealField + Copy> Real for T {}

/// Single-precision aliases.
pub type Gaussian32 = Gaussian<f32>;
pub type InfoForm32 = InfoForm<f32>;
pub type NetworkSpec32 = NetworkSpec<f32>;

/// Double-precision aliases (the defaults, spelled explicitly).
pub type Gaussian64 = Gaussian<f64>;
pub type InfoForm64 = InfoForm<f64>;
pub type NetworkSpec64 = NetworkSpec<f64>;

/// Identifier of a network node.  Ids are case-sensitive and compare as
/// plain strings; ordered containers keyed by `NodeId` therefore iterate in
/// lexicographic order, which the engines rely on for determinism.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_owned())
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        NodeId(s)
    }
}
