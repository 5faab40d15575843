//! Decentralized inference by local message exchange.
//!
//! Every node owns two summaries of the evidence: `π` (moment form)
//! captures everything reaching it through its parents, `λ` (potential
//! form) everything reaching it through its children.  Neighbors exchange
//! messages along the links — moment-form `π` messages downstream,
//! potential-form `λ` messages upstream — and each posterior marginal is
//! the normalized product of the local `π` and `λ`.  On a singly-connected
//! network two sweeps over a spanning tree (collect towards a root, then
//! distribute back out) deliver every message exactly once, after which
//! all beliefs are exact.
//!
//! Observed nodes short-circuit the exchange: their downstream message is
//! a point mass at the observed value, their upstream message treats the
//! observation as a zero-variance target, and information never crosses
//! them between their parents' and children's subtrees.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector};

use crate::gaussian::{self, Gaussian, InfoForm};
use crate::linalg::{self, SpdFactor};
use crate::network::{NetworkSpec, NodeKind};
use crate::{Error, NodeId, Real, Result};

/// Moment-form message a node sends down a link to one of its children.
pub type PiMessage<T = f64> = Gaussian<T>;

/// Potential a node sends up a link to one of its parents.
pub type LambdaMessage<T = f64> = InfoForm<T>;

/// Evidence summary a node holds about its children's subtrees.
///
/// Observed nodes pin their state outright; everything else carries a
/// (possibly unit, possibly rank-deficient) potential.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeLambda<T = f64> {
    /// Product of the potentials received from all children.
    Potential(InfoForm<T>),
    /// The node is observed at this value.
    Instantiated(DVector<T>),
}

impl<T: Real> NodeLambda<T> {
    pub fn dim(&self) -> usize {
        match self {
            NodeLambda::Potential(p) => p.dim(),
            NodeLambda::Instantiated(z) => z.len(),
        }
    }

    /// Whether this summary carries no information at all.
    pub fn is_unit(&self) -> bool {
        matches!(self, NodeLambda::Potential(p) if p.is_unit())
    }
}

/// Prior summary `π(x)`: the node's marginal given only what arrives
/// through its parents.
///
/// `from_parents` maps each parent id to the moment-form message it sent;
/// an observed parent sends a point mass.  An observed node is its own
/// point mass regardless of the parents.
pub fn compute_pi<T: Real>(
    net: &NetworkSpec<T>,
    id: &NodeId,
    from_parents: &BTreeMap<NodeId, Gaussian<T>>,
) -> Result<Gaussian<T>> {
    let node = net.node(id).ok_or_else(|| Error::UnknownNode(id.clone()))?;
    if let Some(z) = net.evidence(id) {
        return Ok(Gaussian::point(z.clone()));
    }
    match &node.kind {
        NodeKind::Root { prior } => Ok(prior.clone()),
        NodeKind::Internal { noise_cov, offset } => {
            let parents = net.parents_of(id);
            let mut coeffs: Vec<(&DMatrix<T>, &Gaussian<T>)> = Vec::with_capacity(parents.len());
            for (p, b) in &parents {
                let g = from_parents
                    .get(p)
                    .ok_or_else(|| Error::IncompleteMailbox {
                        from: (*p).clone(),
                        to: id.clone(),
                    })?;
                coeffs.push((b, g));
            }
            Ok(gaussian::marginalize_linear(&coeffs, noise_cov)?.translate(offset))
        }
    }
}

/// Evidence summary `λ(x)`: the product of the potentials received from
/// all children, or the pinned value if the node is observed.
pub fn compute_lambda<T: Real>(
    net: &NetworkSpec<T>,
    id: &NodeId,
    from_children: &BTreeMap<NodeId, InfoForm<T>>,
) -> Result<NodeLambda<T>> {
    let node = net.node(id).ok_or_else(|| Error::UnknownNode(id.clone()))?;
    if let Some(z) = net.evidence(id) {
        return Ok(NodeLambda::Instantiated(z.clone()));
    }
    let mut terms = Vec::new();
    for (c, _) in net.children_of(id) {
        let m = from_children
            .get(c)
            .ok_or_else(|| Error::IncompleteMailbox {
                from: c.clone(),
                to: id.clone(),
            })?;
        terms.push(m.clone());
    }
    Ok(NodeLambda::Potential(gaussian::info_product(
        node.dim(),
        &terms,
    )?))
}

/// Posterior marginal as the normalized product `π(x)·λ(x)`.
///
/// Uses the precision route when `π` has an invertible covariance and
/// falls back to the covariance route when only `λ` is invertible; if
/// neither is, the product is not a proper distribution and
/// `SingularCombination` is returned.
pub fn belief<T: Real>(pi: &Gaussian<T>, lambda: &NodeLambda<T>) -> Result<Gaussian<T>> {
    if pi.dim() != lambda.dim() {
        return Err(Error::DimMismatch {
            expected: pi.dim(),
            got: lambda.dim(),
        });
    }
    match lambda {
        NodeLambda::Instantiated(z) => Ok(Gaussian::point(z.clone())),
        NodeLambda::Potential(lam) => belief_from_potential(pi, lam),
    }
}

fn belief_from_potential<T: Real>(pi: &Gaussian<T>, lam: &InfoForm<T>) -> Result<Gaussian<T>> {
    if lam.is_unit() {
        return Ok(pi.clone());
    }
    match belief_precision_form(pi, lam) {
        Err(Error::SingularCovariance) => belief_covariance_form(pi, lam).map_err(|e| match e {
            Error::SingularPrecision => Error::SingularCombination,
            other => other,
        }),
        r => r,
    }
}

/// Precision route for the belief: `Λ_post = P_π⁻¹ + Λ`,
/// `η_post = P_π⁻¹ x̄_π + η`.  Requires `π` to have invertible covariance.
pub fn belief_precision_form<T: Real>(pi: &Gaussian<T>, lam: &InfoForm<T>) -> Result<Gaussian<T>> {
    check_belief_dims(pi, lam)?;
    let f = SpdFactor::new(pi.cov()).ok_or(Error::SingularCovariance)?;
    let prec = linalg::symmetrize(&(f.inverse() + lam.prec()));
    let info = f.solve_vec(pi.mean()) + lam.info();
    InfoForm::new(prec, info)?.to_moment()
}

/// Covariance route for the belief: convert `λ` to moment form and take
/// the covariance-form product with `π`.  Requires `λ` to have invertible
/// precision; `π` may be singular, including an outright point mass.
pub fn belief_covariance_form<T: Real>(pi: &Gaussian<T>, lam: &InfoForm<T>) -> Result<Gaussian<T>> {
    check_belief_dims(pi, lam)?;
    let lam_moment = lam.to_moment()?;
    Ok(gaussian::product_covariance_form(&lam_moment, pi)?.0)
}

fn check_belief_dims<T: Real>(pi: &Gaussian<T>, lam: &InfoForm<T>) -> Result<()> {
    if pi.dim() != lam.dim() {
        return Err(Error::DimMismatch {
            expected: pi.dim(),
            got: lam.dim(),
        });
    }
    Ok(())
}

/// Moment-form message `id` sends to the child `child`: the node's belief
/// recomputed with `child`'s own potential left out, so the child sees all
/// evidence except what it reported itself.  An observed node sends its
/// point mass to every child.
pub fn message_to_child<T: Real>(
    net: &NetworkSpec<T>,
    id: &NodeId,
    child: &NodeId,
    pi: &Gaussian<T>,
    from_other_children: &BTreeMap<NodeId, InfoForm<T>>,
) -> Result<PiMessage<T>> {
    if net.link(id, child).is_none() {
        return Err(Error::UnknownNode(child.clone()));
    }
    if let Some(z) = net.evidence(id) {
        return Ok(Gaussian::point(z.clone()));
    }
    let mut terms = Vec::new();
    for (c, _) in net.children_of(id) {
        if c == child {
            continue;
        }
        let m = from_other_children
            .get(c)
            .ok_or_else(|| Error::IncompleteMailbox {
                from: c.clone(),
                to: id.clone(),
            })?;
        terms.push(m.clone());
    }
    belief_from_potential(pi, &gaussian::info_product(pi.dim(), &terms)?)
}

/// Potential `id` sends to one of its parents, combining its own evidence
/// summary with the moment-form messages from every other parent.
///
/// Dispatches on the shape of the summary: pinned values and invertible
/// potentials go through the covariance route, rank-deficient potentials
/// through the factored route.
pub fn message_to_parent<T: Real>(
    net: &NetworkSpec<T>,
    id: &NodeId,
    parent: &NodeId,
    lambda: &NodeLambda<T>,
    from_other_parents: &BTreeMap<NodeId, Gaussian<T>>,
) -> Result<LambdaMessage<T>> {
    match lambda {
        NodeLambda::Instantiated(z) => {
            let pinned = Gaussian::point(z.clone());
            message_to_parent_covariance_form(net, id, parent, &pinned, from_other_parents)
        }
        NodeLambda::Potential(lam) => match lam.to_moment() {
            Ok(m) => message_to_parent_covariance_form(net, id, parent, &m, from_other_parents),
            Err(Error::SingularPrecision) => {
                message_to_parent_factored_form(net, id, parent, lam, from_other_parents)
            }
            Err(e) => Err(e),
        },
    }
}

/// Covariance route for the upstream message.  With the evidence summary
/// in moment form `(x̄_λ, P_λ)` — a point mass when the node is observed —
/// the message to parent `i` is
///
/// `S = P_λ + Q + Σ_{k≠i} B_k P_k B_kᵀ`,
/// `Λ_msg = Bᵢᵀ S⁻¹ Bᵢ`,  `η_msg = Bᵢᵀ S⁻¹ (x̄_λ − b − Σ_{k≠i} B_k ū_k)`.
pub fn message_to_parent_covariance_form<T: Real>(
    net: &NetworkSpec<T>,
    id: &NodeId,
    parent: &NodeId,
    lambda_moment: &Gaussian<T>,
    from_other_parents: &BTreeMap<NodeId, Gaussian<T>>,
) -> Result<LambdaMessage<T>> {
    let fam = family(net, id, parent)?;
    if lambda_moment.dim() != fam.dim {
        return Err(Error::DimMismatch {
            expected: fam.dim,
            got: lambda_moment.dim(),
        });
    }
    let (spread, shift) = fam.spread_and_shift(id, from_other_parents)?;
    let s = linalg::symmetrize(&(lambda_moment.cov() + &spread));
    let f = SpdFactor::new(&s).ok_or(Error::SingularCovariance)?;
    let s_inv_b = f.solve_mat(fam.target);
    let prec = linalg::symmetrize(&(fam.target.transpose() * &s_inv_b));
    let info = s_inv_b.transpose() * (lambda_moment.mean() - shift);
    InfoForm::new(prec, info)
}

/// Factored route for the upstream message, valid for any positive
/// semidefinite potential `(Λ, η)`.
///
/// Writing `Λ = Uᵀ U` with `U` of full row rank and `y` the pseudo-target
/// with `Uᵀ y = η`, the potential is exactly a unit-noise observation
/// `y = U x + e`, so with `M = Q + Σ_{k≠i} B_k P_k B_kᵀ` and
/// `c = b + Σ_{k≠i} B_k ū_k`:
///
/// `S = U M Uᵀ + I` (always invertible),
/// `Λ_msg = (U Bᵢ)ᵀ S⁻¹ (U Bᵢ)`,  `η_msg = (U Bᵢ)ᵀ S⁻¹ (y − U c)`.
pub fn message_to_parent_factored_form<T: Real>(
    net: &NetworkSpec<T>,
    id: &NodeId,
    parent: &NodeId,
    lam: &InfoForm<T>,
    from_other_parents: &BTreeMap<NodeId, Gaussian<T>>,
) -> Result<LambdaMessage<T>> {
    let fam = family(net, id, parent)?;
    if lam.dim() != fam.dim {
        return Err(Error::DimMismatch {
            expected: fam.dim,
            got: lam.dim(),
        });
    }
    let p = fam.target.ncols();
    let u = linalg::psd_root(lam.prec());
    let r = u.nrows();
    if r == 0 {
        return InfoForm::new(DMatrix::zeros(p, p), DVector::zeros(p));
    }
    let (spread, shift) = fam.spread_and_shift(id, from_other_parents)?;

    // U has full row rank, so U Uᵀ is invertible and y = (U Uᵀ)⁻¹ U η
    // solves Uᵀ y = η for any η in the row space of U.
    let uut = linalg::symmetrize(&(&u * u.transpose()));
    let y = SpdFactor::new(&uut)
        .ok_or(Error::SingularPrecision)?
        .solve_vec(&(&u * lam.info()));

    let inner = linalg::symmetrize(&(&u * &spread * u.transpose() + DMatrix::identity(r, r)));
    let f = SpdFactor::new(&inner).ok_or(Error::SingularCombination)?;
    let ub = &u * fam.target;
    let s_inv_ub = f.solve_mat(&ub);
    let prec = linalg::symmetrize(&(ub.transpose() * &s_inv_ub));
    let info = s_inv_ub.transpose() * (y - &u * shift);
    InfoForm::new(prec, info)
}

/// Link data of `id` split by the message target: the link from `parent`
/// plus everything shared with the remaining parents.
struct FamilyView<'a, T: Real> {
    dim: usize,
    target: &'a DMatrix<T>,
    others: Vec<(&'a NodeId, &'a DMatrix<T>)>,
    noise: &'a DMatrix<T>,
    offset: &'a DVector<T>,
}

fn family<'a, T: Real>(
    net: &'a NetworkSpec<T>,
    id: &NodeId,
    parent: &NodeId,
) -> Result<FamilyView<'a, T>> {
    let node = net.node(id).ok_or_else(|| Error::UnknownNode(id.clone()))?;
    let NodeKind::Internal { noise_cov, offset } = &node.kind else {
        return Err(Error::UnknownNode(parent.clone()));
    };
    let mut target = None;
    let mut others = Vec::new();
    for (k, b) in net.parents_of(id) {
        if k == parent {
            target = Some(b);
        } else {
            others.push((k, b));
        }
    }
    Ok(FamilyView {
        dim: node.dim(),
        target: target.ok_or_else(|| Error::UnknownNode(parent.clone()))?,
        others,
        noise: noise_cov,
        offset,
    })
}

impl<T: Real> FamilyView<'_, T> {
    /// `M = Q + Σ_{k≠i} B_k P_k B_kᵀ` and `c = b + Σ_{k≠i} B_k ū_k`.
    fn spread_and_shift(
        &self,
        id: &NodeId,
        from_other_parents: &BTreeMap<NodeId, Gaussian<T>>,
    ) -> Result<(DMatrix<T>, DVector<T>)> {
        let mut spread = self.noise.clone();
        let mut shift = self.offset.clone();
        for (k, bk) in &self.others {
            let g = from_other_parents
                .get(k)
                .ok_or_else(|| Error::IncompleteMailbox {
                    from: (*k).clone(),
                    to: id.clone(),
                })?;
            if g.dim() != bk.ncols() {
                return Err(Error::DimMismatch {
                    expected: bk.ncols(),
                    got: g.dim(),
                });
            }
            spread += *bk * g.cov() * bk.transpose();
            shift += *bk * g.mean();
        }
        Ok((linalg::symmetrize(&spread), shift))
    }
}

/// Posterior marginals of every node, keyed by node id.
#[derive(Debug, Clone, Default)]
pub struct BeliefTable<T = f64> {
    map: BTreeMap<NodeId, Gaussian<T>>,
}

impl<T: Real> BeliefTable<T> {
    pub fn get(&self, id: &NodeId) -> Option<&Gaussian<T>> {
        self.map.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NodeId, &Gaussian<T>)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Everything a full propagation pass produces: the posterior marginals
/// plus all intermediate messages and per-node summaries, so callers can
/// audit the exchange.
#[derive(Debug, Clone)]
pub struct Propagation<T = f64> {
    beliefs: BeliefTable<T>,
    pi_messages: BTreeMap<(NodeId, NodeId), PiMessage<T>>,
    lambda_messages: BTreeMap<(NodeId, NodeId), LambdaMessage<T>>,
    node_pi: BTreeMap<NodeId, Gaussian<T>>,
    node_lambda: BTreeMap<NodeId, NodeLambda<T>>,
}

impl<T: Real> Propagation<T> {
    pub fn beliefs(&self) -> &BeliefTable<T> {
        &self.beliefs
    }

    /// Posterior marginal of one node; observed nodes report their point
    /// mass.
    pub fn belief(&self, id: &NodeId) -> Option<&Gaussian<T>> {
        self.beliefs.get(id)
    }

    /// Moment-form message sent along the link `from -> to`.
    pub fn pi_message(&self, from: &NodeId, to: &NodeId) -> Option<&PiMessage<T>> {
        self.pi_messages.get(&(from.clone(), to.clone()))
    }

    /// Potential sent against the link `to -> from`, i.e. from child
    /// `from` up to parent `to`.
    pub fn lambda_message(&self, from: &NodeId, to: &NodeId) -> Option<&LambdaMessage<T>> {
        self.lambda_messages.get(&(from.clone(), to.clone()))
    }

    pub fn node_pi(&self, id: &NodeId) -> Option<&Gaussian<T>> {
        self.node_pi.get(id)
    }

    pub fn node_lambda(&self, id: &NodeId) -> Option<&NodeLambda<T>> {
        self.node_lambda.get(id)
    }
}

/// Runs the two-sweep schedule over every connected component, rooting
/// each tree at its lexicographically smallest node.
pub fn propagate<T: Real>(net: &NetworkSpec<T>) -> Result<Propagation<T>> {
    propagate_impl(net, None)
}

/// Same as [`propagate`] but roots the tree of `root`'s component at
/// `root`.  The choice of root must not change any belief; exposing it
/// lets callers check exactly that.
pub fn propagate_with_root<T: Real>(net: &NetworkSpec<T>, root: &NodeId) -> Result<Propagation<T>> {
    if !net.contains(root) {
        return Err(Error::UnknownNode(root.clone()));
    }
    propagate_impl(net, Some(root))
}

/// Posterior marginal of `query` given all evidence in the network.
pub fn posterior<T: Real>(net: &NetworkSpec<T>, query: &NodeId) -> Result<Gaussian<T>> {
    if !net.contains(query) {
        return Err(Error::UnknownNode(query.clone()));
    }
    if net.has_evidence(query) {
        return Err(Error::HasEvidence(query.clone()));
    }
    let prop = propagate(net)?;
    Ok(prop
        .belief(query)
        .expect("propagation covers every node")
        .clone())
}

fn propagate_impl<T: Real>(
    net: &NetworkSpec<T>,
    root_override: Option<&NodeId>,
) -> Result<Propagation<T>> {
    let report = net.validate();
    if !report.is_empty() {
        return Err(Error::InvalidNetwork(report));
    }
    if net.is_empty() {
        return Err(Error::EmptyDimension);
    }

    let mut pi_messages = BTreeMap::new();
    let mut lambda_messages = BTreeMap::new();
    let mut covered: BTreeSet<NodeId> = BTreeSet::new();

    for start in net.node_ids() {
        if covered.contains(start) {
            continue;
        }
        let component = net.component_of(start);
        covered.extend(component.iter().cloned());
        let root = match root_override {
            Some(r) if component.contains(r) => r.clone(),
            // `start` is the smallest id in its component because ids are
            // visited in sorted order.
            _ => start.clone(),
        };

        // Spanning tree by breadth-first search from the root.
        let mut order = Vec::with_capacity(component.len());
        let mut tree_parent: BTreeMap<NodeId, NodeId> = BTreeMap::new();
        let mut queued = BTreeSet::from([root.clone()]);
        let mut queue = VecDeque::from([root.clone()]);
        while let Some(v) = queue.pop_front() {
            for n in net.neighbors(&v) {
                if queued.insert((*n).clone()) {
                    tree_parent.insert((*n).clone(), v.clone());
                    queue.push_back((*n).clone());
                }
            }
            order.push(v);
        }

        // Collect: leaves towards the root.
        for v in order.iter().rev() {
            if let Some(p) = tree_parent.get(v) {
                send(net, v, p, &mut pi_messages, &mut lambda_messages)?;
            }
        }
        // Distribute: root back out to the leaves.
        for v in &order {
            for n in net.neighbors(v) {
                if tree_parent.get(n) == Some(v) {
                    send(net, v, n, &mut pi_messages, &mut lambda_messages)?;
                }
            }
        }
    }

    let mut node_pi = BTreeMap::new();
    let mut node_lambda = BTreeMap::new();
    let mut beliefs = BTreeMap::new();
    for id in net.node_ids() {
        let from_parents = parent_inbox(net, id, &pi_messages);
        let from_children = child_inbox(net, id, &lambda_messages);
        let pi = compute_pi(net, id, &from_parents)?;
        let lam = compute_lambda(net, id, &from_children)?;
        beliefs.insert(id.clone(), belief(&pi, &lam)?);
        node_pi.insert(id.clone(), pi);
        node_lambda.insert(id.clone(), lam);
    }

    Ok(Propagation {
        beliefs: BeliefTable { map: beliefs },
        pi_messages,
        lambda_messages,
        node_pi,
        node_lambda,
    })
}

/// One message along the tree edge `from -> to`, in whichever direction
/// the underlying link points.
fn send<T: Real>(
    net: &NetworkSpec<T>,
    from: &NodeId,
    to: &NodeId,
    pi_messages: &mut BTreeMap<(NodeId, NodeId), PiMessage<T>>,
    lambda_messages: &mut BTreeMap<(NodeId, NodeId), LambdaMessage<T>>,
) -> Result<()> {
    if net.link(from, to).is_some() {
        let pi = compute_pi(net, from, &parent_inbox(net, from, pi_messages))?;
        let mut inbox = child_inbox(net, from, lambda_messages);
        inbox.remove(to);
        let msg = message_to_child(net, from, to, &pi, &inbox)?;
        pi_messages.insert((from.clone(), to.clone()), msg);
    } else {
        let lam = compute_lambda(net, from, &child_inbox(net, from, lambda_messages))?;
        let mut others = parent_inbox(net, from, pi_messages);
        others.remove(to);
        let msg = message_to_parent(net, from, to, &lam, &others)?;
        lambda_messages.insert((from.clone(), to.clone()), msg);
    }
    Ok(())
}

fn parent_inbox<T: Real>(
    net: &NetworkSpec<T>,
    id: &NodeId,
    pi_messages: &BTreeMap<(NodeId, NodeId), Gaussian<T>>,
) -> BTreeMap<NodeId, Gaussian<T>> {
    net.parents_of(id)
        .into_iter()
        .filter_map(|(p, _)| {
            pi_messages
                .get(&(p.clone(), id.clone()))
                .map(|g| (p.clone(), g.clone()))
        })
        .collect()
}

fn child_inbox<T: Real>(
    net: &NetworkSpec<T>,
    id: &NodeId,
    lambda_messages: &BTreeMap<(NodeId, NodeId), InfoForm<T>>,
) -> BTreeMap<NodeId, InfoForm<T>> {
    net.children_of(id)
        .into_iter()
        .filter_map(|(c, _)| {
            lambda_messages
                .get(&(c.clone(), id.clone()))
                .map(|m| (c.clone(), m.clone()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use nalgebra::{dmatrix, dvector};

    fn chain3() -> NetworkSpec {
        let mut net: NetworkSpec = NetworkSpec::new();
        net.add_root("u", Gaussian::standard(1)).unwrap();
        net.add_internal("x", dmatrix![1.0]).unwrap();
        net.add_internal("y", dmatrix![1.0]).unwrap();
        net.add_link("u", "x", dmatrix![1.0]).unwrap();
        net.add_link("x", "y", dmatrix![1.0]).unwrap();
        net
    }

    fn assert_close(a: &Gaussian, b: &Gaussian, tol: f64) {
        assert!(
            (a.mean() - b.mean()).norm() < tol,
            "means differ: {} vs {}",
            a.mean(),
            b.mean()
        );
        assert!(
            (a.cov() - b.cov()).norm() < tol,
            "covariances differ: {} vs {}",
            a.cov(),
            b.cov()
        );
    }

    #[test]
    fn pi_of_root_is_prior() {
        let net = chain3();
        let pi = compute_pi(&net, &NodeId::from("u"), &BTreeMap::new()).unwrap();
        assert_close(&pi, &Gaussian::standard(1), 1e-15);
    }

    #[test]
    fn pi_through_observed_parent() {
        // x = 2u + v with u observed at 3: π(x) = N(6, 1).
        let mut net: NetworkSpec = NetworkSpec::new();
        net.add_root("u", Gaussian::standard(1)).unwrap();
        net.add_internal("x", dmatrix![1.0]).unwrap();
        net.add_link("u", "x", dmatrix![2.0]).unwrap();
        let net = net
            .attach_evidence(&NodeId::from("u"), dvector![3.0])
            .unwrap();
        let msgs = BTreeMap::from([(NodeId::from("u"), Gaussian::point(dvector![3.0]))]);
        let pi = compute_pi(&net, &NodeId::from("x"), &msgs).unwrap();
        assert_close(
            &pi,
            &Gaussian::new(dvector![6.0], dmatrix![1.0]).unwrap(),
            1e-14,
        );
    }

    #[test]
    fn lambda_product_of_children() {
        let mut net: NetworkSpec = NetworkSpec::new();
        net.add_root("x", Gaussian::standard(1)).unwrap();
        net.add_internal("y1", dmatrix![1.0]).unwrap();
        net.add_internal("y2", dmatrix![1.0]).unwrap();
        net.add_link("x", "y1", dmatrix![1.0]).unwrap();
        net.add_link("x", "y2", dmatrix![1.0]).unwrap();
        let msgs = BTreeMap::from([
            (
                NodeId::from("y1"),
                InfoForm::new(dmatrix![0.5], dvector![1.0]).unwrap(),
            ),
            (
                NodeId::from("y2"),
                InfoForm::new(dmatrix![0.5], dvector![2.0]).unwrap(),
            ),
        ]);
        let lam = compute_lambda(&net, &NodeId::from("x"), &msgs).unwrap();
        let NodeLambda::Potential(p) = lam else {
            panic!("expected a potential");
        };
        assert_eq!(p.prec(), &dmatrix![1.0]);
        assert_eq!(p.info(), &dvector![3.0]);
    }

    #[test]
    fn belief_combines_pi_and_lambda() {
        let pi = Gaussian::standard(1);
        let lam = NodeLambda::Potential(InfoForm::new(dmatrix![1.0], dvector![2.0]).unwrap());
        let b = belief(&pi, &lam).unwrap();
        assert_close(
            &b,
            &Gaussian::new(dvector![1.0], dmatrix![0.5]).unwrap(),
            1e-12,
        );
    }

    #[test]
    fn belief_routes_agree_when_both_apply() {
        let pi = Gaussian::new(dvector![1.0, -1.0], dmatrix![2.0, 0.5; 0.5, 1.0]).unwrap();
        let lam = InfoForm::new(dmatrix![1.0, 0.2; 0.2, 3.0], dvector![0.5, 1.0]).unwrap();
        let a = belief_precision_form(&pi, &lam).unwrap();
        let b = belief_covariance_form(&pi, &lam).unwrap();
        assert_close(&a, &b, 1e-12);
    }

    #[test]
    fn belief_with_point_pi_stays_pinned() {
        let pi = Gaussian::point(dvector![2.0]);
        let lam = NodeLambda::Potential(InfoForm::new(dmatrix![1.0], dvector![0.0]).unwrap());
        let b = belief(&pi, &lam).unwrap();
        assert!(b.is_point());
        assert_eq!(b.mean(), &dvector![2.0]);
    }

    #[test]
    fn belief_rejects_doubly_singular_input() {
        // Both π and λ rank-deficient: the product pins no proper
        // distribution in the shared null direction.
        let pi = Gaussian::new(dvector![0.0, 0.0], dmatrix![1.0, 0.0; 0.0, 0.0]).unwrap();
        // A unit potential would short-circuit, so use a singular but
        // nonzero one.
        let lam = InfoForm::new(dmatrix![1.0, 0.0; 0.0, 0.0], dvector![1.0, 0.0]).unwrap();
        assert!(matches!(
            belief(&pi, &NodeLambda::Potential(lam)),
            Err(Error::SingularCombination)
        ));
    }

    #[test]
    fn child_message_recombines_to_full_belief() {
        // Star around x with three observed children: the message x sends
        // to child j, fused with j's own potential, must reproduce the
        // full belief at x.
        let mut net: NetworkSpec = NetworkSpec::new();
        net.add_root("x", Gaussian::new(dvector![0.5], dmatrix![2.0]).unwrap())
            .unwrap();
        for (c, h) in [("c1", 1.0), ("c2", -2.0), ("c3", 0.5)] {
            net.add_internal(c, dmatrix![1.0]).unwrap();
            net.add_link("x", c, dmatrix![h]).unwrap();
        }
        let net = net
            .attach_evidence(&NodeId::from("c1"), dvector![1.0])
            .unwrap()
            .attach_evidence(&NodeId::from("c2"), dvector![-1.5])
            .unwrap()
            .attach_evidence(&NodeId::from("c3"), dvector![0.25])
            .unwrap();
        let prop = propagate(&net).unwrap();
        let x = NodeId::from("x");
        let full = prop.belief(&x).unwrap();
        for c in ["c1", "c2", "c3"] {
            let c = NodeId::from(c);
            let loo = prop.pi_message(&x, &c).unwrap();
            let lam_c = prop.lambda_message(&c, &x).unwrap();
            let fused = belief(loo, &NodeLambda::Potential(lam_c.clone())).unwrap();
            assert_close(&fused, full, 1e-10);
        }
    }

    #[test]
    fn upstream_messages_on_observed_chain() {
        // u -> x -> y with y observed at 2; unit links and noises.
        let net = chain3()
            .attach_evidence(&NodeId::from("y"), dvector![2.0])
            .unwrap();
        let y = NodeId::from("y");
        let x = NodeId::from("x");
        let u = NodeId::from("u");

        let lam_y = compute_lambda(&net, &y, &BTreeMap::new()).unwrap();
        let msg_yx = message_to_parent(&net, &y, &x, &lam_y, &BTreeMap::new()).unwrap();
        assert!((msg_yx.prec()[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((msg_yx.info()[0] - 2.0).abs() < 1e-14);

        let from_children = BTreeMap::from([(y.clone(), msg_yx)]);
        let lam_x = compute_lambda(&net, &x, &from_children).unwrap();
        let msg_xu = message_to_parent(&net, &x, &u, &lam_x, &BTreeMap::new()).unwrap();
        assert!((msg_xu.prec()[(0, 0)] - 0.5).abs() < 1e-14);
        assert!((msg_xu.info()[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn upstream_routes_agree_on_invertible_potential() {
        // Two-parent node with a proper potential; compare both routes.
        let mut net: NetworkSpec = NetworkSpec::new();
        net.add_root("a", Gaussian::standard(2)).unwrap();
        net.add_root("b", Gaussian::standard(1)).unwrap();
        net.add_internal("x", dmatrix![0.5, 0.1; 0.1, 0.4]).unwrap();
        net.add_link("a", "x", dmatrix![1.0, 0.0; 0.0, 1.0])
            .unwrap();
        net.add_link("b", "x", dmatrix![2.0; -1.0]).unwrap();
        let lam = InfoForm::new(dmatrix![2.0, 0.3; 0.3, 1.0], dvector![1.0, -0.5]).unwrap();
        let others = BTreeMap::from([(
            NodeId::from("b"),
            Gaussian::new(dvector![0.5], dmatrix![2.0]).unwrap(),
        )]);
        let a = NodeId::from("a");
        let x = NodeId::from("x");
        let cov_route =
            message_to_parent_covariance_form(&net, &x, &a, &lam.to_moment().unwrap(), &others)
                .unwrap();
        let fac_route = message_to_parent_factored_form(&net, &x, &a, &lam, &others).unwrap();
        assert!((cov_route.prec() - fac_route.prec()).norm() < 1e-12);
        assert!((cov_route.info() - fac_route.info()).norm() < 1e-12);
    }

    #[test]
    fn chain_beliefs_match_oracle() {
        let net = chain3()
            .attach_evidence(&NodeId::from("y"), dvector![2.0])
            .unwrap();
        let prop = propagate(&net).unwrap();
        for id in [NodeId::from("u"), NodeId::from("x")] {
            let want = oracle::exact_posterior(&net, &id).unwrap();
            assert_close(prop.belief(&id).unwrap(), &want, 1e-12);
        }
        // The observed node reports its point mass.
        let y = prop.belief(&NodeId::from("y")).unwrap();
        assert!(y.is_point());
        assert_eq!(y.mean(), &dvector![2.0]);
    }

    #[test]
    fn explaining_away_matches_oracle() {
        // a -> c <- b with c observed: a and b become coupled.
        let mut net: NetworkSpec = NetworkSpec::new();
        net.add_root("a", Gaussian::standard(1)).unwrap();
        net.add_root("b", Gaussian::new(dvector![1.0], dmatrix![2.0]).unwrap())
            .unwrap();
        net.add_internal("c", dmatrix![0.5]).unwrap();
        net.add_link("a", "c", dmatrix![1.0]).unwrap();
        net.add_link("b", "c", dmatrix![1.0]).unwrap();
        let net = net
            .attach_evidence(&NodeId::from("c"), dvector![3.0])
            .unwrap();
        let prop = propagate(&net).unwrap();
        for id in [NodeId::from("a"), NodeId::from("b")] {
            let want = oracle::exact_posterior(&net, &id).unwrap();
            assert_close(prop.belief(&id).unwrap(), &want, 1e-12);
        }
    }

    #[test]
    fn vector_polytree_matches_oracle() {
        // 2-D root with two children, one observed, one with a further
        // grandchild; checks vector-valued messages end to end.
        let mut net: NetworkSpec = NetworkSpec::new();
        net.add_root(
            "x",
            Gaussian::new(dvector![1.0, -2.0], dmatrix![4.0, 1.0; 1.0, 3.0]).unwrap(),
        )
        .unwrap();
        net.add_internal("y", dmatrix![0.5]).unwrap();
        net.add_internal("z", dmatrix![1.0, 0.2; 0.2, 2.0]).unwrap();
        net.add_internal("w", dmatrix![1.5]).unwrap();
        net.add_link("x", "y", dmatrix![1.0, -1.0]).unwrap();
        net.add_link("x", "z", dmatrix![2.0, 0.0; 0.0, 1.0])
            .unwrap();
        net.add_link("z", "w", dmatrix![1.0, 1.0]).unwrap();
        let net = net
            .attach_evidence(&NodeId::from("y"), dvector![0.5])
            .unwrap()
            .attach_evidence(&NodeId::from("w"), dvector![-1.0])
            .unwrap();
        let prop = propagate(&net).unwrap();
        for id in [NodeId::from("x"), NodeId::from("z")] {
            let want = oracle::exact_posterior(&net, &id).unwrap();
            assert_close(prop.belief(&id).unwrap(), &want, 1e-10);
        }
    }

    #[test]
    fn root_choice_does_not_change_beliefs() {
        let net = chain3()
            .attach_evidence(&NodeId::from("y"), dvector![2.0])
            .unwrap();
        let a = propagate(&net).unwrap();
        for root in ["u", "x", "y"] {
            let b = propagate_with_root(&net, &NodeId::from(root)).unwrap();
            for id in net.node_ids() {
                assert_close(a.belief(id).unwrap(), b.belief(id).unwrap(), 1e-12);
            }
        }
    }

    #[test]
    fn disconnected_components_are_all_covered() {
        let mut net: NetworkSpec = NetworkSpec::new();
        net.add_root("a", Gaussian::standard(1)).unwrap();
        net.add_internal("b", dmatrix![1.0]).unwrap();
        net.add_link("a", "b", dmatrix![1.0]).unwrap();
        net.add_root("p", Gaussian::new(dvector![5.0], dmatrix![1.0]).unwrap())
            .unwrap();
        net.add_internal("q", dmatrix![1.0]).unwrap();
        net.add_link("p", "q", dmatrix![1.0]).unwrap();
        let net = net
            .attach_evidence(&NodeId::from("q"), dvector![4.0])
            .unwrap();
        let prop = propagate(&net).unwrap();
        assert_eq!(prop.beliefs().len(), 4);
        // Evidence in one component leaves the other untouched.
        assert_close(
            prop.belief(&NodeId::from("a")).unwrap(),
            &Gaussian::standard(1),
            1e-14,
        );
        let want = oracle::exact_posterior(&net, &NodeId::from("p")).unwrap();
        assert_close(prop.belief(&NodeId::from("p")).unwrap(), &want, 1e-12);
    }

    #[test]
    fn multiply_connected_network_is_rejected() {
        let mut net: NetworkSpec = NetworkSpec::new();
        net.add_root("u", Gaussian::standard(1)).unwrap();
        net.add_internal("x1", dmatrix![1.0]).unwrap();
        net.add_internal("x2", dmatrix![1.0]).unwrap();
        net.add_internal("w", dmatrix![1.0]).unwrap();
        net.add_link("u", "x1", dmatrix![1.0]).unwrap();
        net.add_link("u", "x2", dmatrix![1.0]).unwrap();
        net.add_link("x1", "w", dmatrix![1.0]).unwrap();
        net.add_link("x2", "w", dmatrix![1.0]).unwrap();
        assert!(matches!(propagate(&net), Err(Error::InvalidNetwork(_))));
    }

    #[test]
    fn posterior_rejects_observed_query() {
        let net = chain3()
            .attach_evidence(&NodeId::from("y"), dvector![2.0])
            .unwrap();
        assert!(matches!(
            posterior(&net, &NodeId::from("y")),
            Err(Error::HasEvidence(_))
        ));
        assert!(posterior(&net, &NodeId::from("x")).is_ok());
    }

    #[test]
    fn evidence_blocks_information_flow() {
        // u -> x -> y with x observed: evidence at y must not move u.
        let net = chain3()
            .attach_evidence(&NodeId::from("x"), dvector![1.0])
            .unwrap()
            .attach_evidence(&NodeId::from("y"), dvector![10.0])
            .unwrap();
        let prop = propagate(&net).unwrap();
        let u = prop.belief(&NodeId::from("u")).unwrap();
        // Posterior of u given x = 1 alone: N(1/2, 1/2).
        assert_close(
            u,
            &Gaussian::new(dvector![0.5], dmatrix![0.5]).unwrap(),
            1e-12,
        );
    }
}
