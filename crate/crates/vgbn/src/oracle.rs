//! Brute-force reference: assemble the full joint Gaussian and condition.
//!
//! Any network of linear-Gaussian nodes defines a joint normal over the
//! concatenation of all node states.  Walking the nodes in topological
//! order and accumulating means and covariances yields that joint exactly;
//! evidence is then handled by block conditioning.  This costs a dense
//! matrix over the whole network and is the slowest route, but it makes no
//! structural assumptions beyond acyclicity — in particular it accepts
//! multiply-connected DAGs — which makes it the yardstick the two
//! polytree engines are checked against.

use nalgebra::{DMatrix, DVector};

use crate::gaussian::{BlockLayout, Gaussian, JointGaussian};
use crate::linalg;
use crate::network::{NetworkSpec, NodeKind};
use crate::{Error, NodeId, Real, Result};

/// Builds the joint distribution over all nodes, blocks ordered by the
/// lexicographically tie-broken topological order.
///
/// The network must validate cleanly except that singly-connectedness is
/// not required here.
pub fn assemble_joint<T: Real>(net: &NetworkSpec<T>) -> Result<JointGaussian<T>> {
    let report = net.validate();
    if !report.is_empty() && !report.only_connectivity() {
        return Err(Error::InvalidNetwork(report));
    }
    if net.is_empty() {
        return Err(Error::EmptyDimension);
    }
    let order = net.topo_order()?;

    let mut mean: DVector<T> = DVector::zeros(0);
    let mut cov: DMatrix<T> = DMatrix::zeros(0, 0);
    let mut entries: Vec<(NodeId, usize)> = Vec::with_capacity(order.len());
    let mut placed = BlockLayout::new(vec![])?;

    for id in &order {
        let node = net.node(id).expect("topological order yields known nodes");
        let d = node.dim();
        let cur = mean.len();

        let (mu_x, cross, block) = match &node.kind {
            NodeKind::Root { prior } => (
                prior.mean().clone(),
                DMatrix::zeros(d, cur),
                prior.cov().clone(),
            ),
            NodeKind::Internal { noise_cov, offset } => {
                // Stack the parent links into one map C over the state built
                // so far; then x = C s + offset + v gives
                //   E[x]       = C E[s] + offset
                //   Cov(x, s)  = C Cov(s)
                //   Cov(x, x)  = C Cov(s) Cᵀ + Q
                let mut c = DMatrix::zeros(d, cur);
                for (parent, b) in net.parents_of(id) {
                    let r = placed
                        .range(parent)
                        .expect("parents precede children in topological order");
                    c.view_mut((0, r.start), (d, r.len())).copy_from(b);
                }
                let cross = &c * &cov;
                let block = linalg::symmetrize(&(&cross * c.transpose() + noise_cov));
                (offset + c * &mean, cross, block)
            }
        };

        let mut new_mean = DVector::zeros(cur + d);
        new_mean.rows_mut(0, cur).copy_from(&mean);
        new_mean.rows_mut(cur, d).copy_from(&mu_x);

        let mut new_cov = DMatrix::zeros(cur + d, cur + d);
        new_cov.view_mut((0, 0), (cur, cur)).copy_from(&cov);
        new_cov.view_mut((cur, 0), (d, cur)).copy_from(&cross);
        new_cov
            .view_mut((0, cur), (cur, d))
            .copy_from(&cross.transpose());
        new_cov.view_mut((cur, cur), (d, d)).copy_from(&block);

        mean = new_mean;
        cov = new_cov;
        entries.push((id.clone(), d));
        placed = BlockLayout::new(entries.clone())?;
    }

    JointGaussian::new(
        Gaussian::new(mean, linalg::symmetrize(&cov))?,
        BlockLayout::new(entries)?,
    )
}

/// Joint over the non-evidence nodes after conditioning on every evidence
/// assignment, in lexicographic node order.
pub fn conditioned_joint<T: Real>(net: &NetworkSpec<T>) -> Result<JointGaussian<T>> {
    let mut joint = assemble_joint(net)?;
    for (id, value) in net.evidence_nodes() {
        joint = joint.condition(id, value)?;
    }
    Ok(joint)
}

/// Exact posterior marginal of `query` given all evidence in the network.
pub fn exact_posterior<T: Real>(net: &NetworkSpec<T>, query: &NodeId) -> Result<Gaussian<T>> {
    if !net.contains(query) {
        return Err(Error::UnknownNode(query.clone()));
    }
    if net.has_evidence(query) {
        return Err(Error::HasEvidence(query.clone()));
    }
    conditioned_joint(net)?.marginal(query)
}
