//! Centralized inference by topology transformation.
//!
//! Instead of exchanging messages, this backend rewrites the network
//! itself: a sequence of exact, local operations — marginalizing out a
//! root parent, absorbing an observation into a root's prior, reversing
//! the arc above an observation, folding a pinned value into its
//! children, deleting barren leaves — each of which preserves the
//! conditional joint over the surviving unobserved nodes.  Applied until
//! only the query remains, the query's prior in the residual one-node
//! network is the exact posterior.
//!
//! Every operation is exposed as a standalone primitive returning a fresh
//! network, and [`reduce`] records the sequence it applied so the
//! whole derivation can be audited or replayed.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::DMatrix;

use crate::gaussian::Gaussian;
use crate::linalg;
use crate::network::{NetworkSpec, NodeKind};
use crate::{Error, NodeId, Real, Result};

/// The kind of rewrite a reduction step applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    /// A root parent was marginalized into its only child.
    RemoveParent,
    /// An observed leaf was folded into its parent's prior (or deleted
    /// outright when nothing depended on it).
    AbsorbEvidence,
    /// An unobserved leaf was deleted.
    RemoveBarren,
    /// The arc above an observed leaf was reversed, re-parenting the
    /// observation one level closer to a root.
    HoistEvidence,
    /// A pinned value was folded into all children, detaching them.
    DetachChildren,
    /// Nodes in components not containing the query were deleted.
    DropDisconnected,
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TransformKind::RemoveParent => "remove-parent",
            TransformKind::AbsorbEvidence => "absorb-evidence",
            TransformKind::RemoveBarren => "remove-barren",
            TransformKind::HoistEvidence => "hoist-evidence",
            TransformKind::DetachChildren => "detach-children",
            TransformKind::DropDisconnected => "drop-disconnected",
        };
        f.write_str(s)
    }
}

/// One applied rewrite: its kind and the nodes it touched, subject first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformStep {
    pub kind: TransformKind,
    pub nodes: Vec<NodeId>,
}

impl fmt::Display for TransformStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind)?;
        for (i, n) in self.nodes.iter().enumerate() {
            write!(f, "{} `{}`", if i == 0 { "" } else { "," }, n)?;
        }
        Ok(())
    }
}

/// Outcome of a full reduction: the applied steps, the residual one-node
/// network, and the query posterior it encodes.
#[derive(Debug, Clone)]
pub struct Reduction<T = f64> {
    pub steps: Vec<TransformStep>,
    pub network: NetworkSpec<T>,
    pub posterior: Gaussian<T>,
}

/// Marginalizes the root `id` out of its only child.
///
/// With `x = B u + (rest) + b + v`, integrating out `u ~ N(ū, P)` folds
/// its contribution into the child's conditional: the offset gains `B ū`
/// and the noise gains `B P Bᵀ`.  A child left without parents becomes a
/// root with that mean and covariance as its prior.
///
/// Only applies to an unobserved root with exactly one child: removing a
/// shared parent would correlate its children, which a single child's
/// noise cannot express.
pub fn remove_parent<T: Real>(net: &NetworkSpec<T>, id: &NodeId) -> Result<NetworkSpec<T>> {
    let node = net.node(id).ok_or_else(|| Error::UnknownNode(id.clone()))?;
    let NodeKind::Root { prior } = &node.kind else {
        return Err(Error::NotRemovable {
            node: id.clone(),
            reason: "not a root".into(),
        });
    };
    if net.has_evidence(id) {
        return Err(Error::NotRemovable {
            node: id.clone(),
            reason: "carries evidence".into(),
        });
    }
    let children = net.children_of(id);
    let child = match children.as_slice() {
        [] => {
            return Err(Error::NotRemovable {
                node: id.clone(),
                reason: "has no children; it is barren".into(),
            })
        }
        [(c, _)] => (*c).clone(),
        _ => {
            return Err(Error::NotRemovable {
                node: id.clone(),
                reason: "has several children; cluster them first".into(),
            })
        }
    };
    let b = net.link(id, &child).expect("child link exists");

    let extra_cov = linalg::symmetrize(&(b * prior.cov() * b.transpose()));
    let extra_mean = b * prior.mean();

    let mut out = net.clone();
    out.links.remove(&(id.clone(), child.clone()));
    out.nodes.remove(id);
    let child_node = out.nodes.get_mut(&child).expect("child exists");
    let NodeKind::Internal { noise_cov, offset } = &mut child_node.kind else {
        unreachable!("a linked child is internal");
    };
    *noise_cov += extra_cov;
    *offset += extra_mean;
    rootify_if_orphaned(&mut out, &child)?;
    Ok(out)
}

/// Deletes the unobserved, childless node `id` together with its incoming
/// links.  Marginalizing a leaf nobody depends on changes nothing else.
pub fn remove_barren<T: Real>(net: &NetworkSpec<T>, id: &NodeId) -> Result<NetworkSpec<T>> {
    if !net.contains(id) {
        return Err(Error::UnknownNode(id.clone()));
    }
    if net.has_evidence(id) {
        return Err(Error::NotRemovable {
            node: id.clone(),
            reason: "carries evidence".into(),
        });
    }
    if !net.children_of(id).is_empty() {
        return Err(Error::NotRemovable {
            node: id.clone(),
            reason: "has children".into(),
        });
    }
    let mut out = net.clone();
    out.links.retain(|_, l| &l.to != id);
    out.nodes.remove(id);
    Ok(out)
}

/// Folds the pinned value of `id` into every child and removes those
/// links.
///
/// With `id` observed at `z`, each child's conditional on its remaining
/// parents absorbs the constant contribution `B z` into its offset.  A
/// child left without parents becomes a root.  The observed node itself
/// stays behind, now childless.
pub fn detach_children<T: Real>(net: &NetworkSpec<T>, id: &NodeId) -> Result<NetworkSpec<T>> {
    if !net.contains(id) {
        return Err(Error::UnknownNode(id.clone()));
    }
    let Some(z) = net.evidence(id) else {
        return Err(Error::NoEvidence(id.clone()));
    };
    let z = z.clone();
    let children: Vec<NodeId> = net
        .children_of(id)
        .into_iter()
        .map(|(c, _)| c.clone())
        .collect();
    let mut out = net.clone();
    for c in &children {
        let b = out
            .links
            .remove(&(id.clone(), c.clone()))
            .expect("child link exists")
            .matrix;
        let child_node = out.nodes.get_mut(c).expect("child exists");
        let NodeKind::Internal { offset, .. } = &mut child_node.kind else {
            unreachable!("a linked child is internal");
        };
        *offset += b * &z;
        rootify_if_orphaned(&mut out, c)?;
    }
    Ok(out)
}

/// Absorbs the childless observed node `id` into the network.
///
/// Three shapes resolve directly:
/// - no parents: the observation constrains nothing else — delete it;
/// - one parent, itself observed: the likelihood is a constant — delete;
/// - one unobserved root parent: replace the parent's prior `N(x̄, P)` by
///   its posterior given `z = H u + b + v`, `v ~ N(0, R)`:
///   `S = H P Hᵀ + R`, `K = P Hᵀ S⁻¹`, mean `x̄ + K (z − H x̄ − b)`,
///   covariance `(I−KH) P (I−KH)ᵀ + K R Kᵀ`; then delete the node.
///
/// Anything else (an internal parent, several parents) must first be
/// simplified by hoisting or parent removal.
pub fn absorb_evidence<T: Real>(net: &NetworkSpec<T>, id: &NodeId) -> Result<NetworkSpec<T>> {
    if !net.contains(id) {
        return Err(Error::UnknownNode(id.clone()));
    }
    let Some(z) = net.evidence(id) else {
        return Err(Error::NoEvidence(id.clone()));
    };
    if !net.children_of(id).is_empty() {
        return Err(Error::UnsupportedReduction {
            node: id.clone(),
            reason: "has children; detach them first".into(),
        });
    }
    let parents = net.parents_of(id);
    match parents.as_slice() {
        [] => {
            let mut out = net.clone();
            out.evidence.remove(id);
            out.nodes.remove(id);
            Ok(out)
        }
        [(p, h)] => {
            let p = (*p).clone();
            if net.has_evidence(&p) {
                let mut out = net.clone();
                out.links.remove(&(p, id.clone()));
                out.evidence.remove(id);
                out.nodes.remove(id);
                return Ok(out);
            }
            let parent_node = net.node(&p).expect("parent exists");
            let NodeKind::Root { prior } = &parent_node.kind else {
                return Err(Error::UnsupportedReduction {
                    node: id.clone(),
                    reason: format!("parent `{p}` is not a root; hoist first"),
                });
            };
            let NodeKind::Internal { noise_cov, offset } = &net.node(id).expect("exists").kind
            else {
                unreachable!("a node with parents is internal");
            };
            let posterior = bayes_update(prior, h, noise_cov, &(z - offset))?;
            let mut out = net.clone();
            out.links.remove(&(p.clone(), id.clone()));
            out.evidence.remove(id);
            out.nodes.remove(id);
            let parent_node = out.nodes.get_mut(&p).expect("parent exists");
            parent_node.kind = NodeKind::Root { prior: posterior };
            Ok(out)
        }
        _ => Err(Error::UnsupportedReduction {
            node: id.clone(),
            reason: "several parents; remove the extra parents first".into(),
        }),
    }
}

/// Reverses the arc above the childless observed node `id`, re-parenting
/// it one level closer to a root.
///
/// With grandparent `g`, parent `p | g ~ N(F g + b_p, Q)` and observation
/// `z = H p + b_e + v`, `v ~ N(0, R)`, the factorization
/// `P(p|g) P(z|p) = P(z|g) P(p|g,z)` rewires the pair exactly:
/// the observed node now hangs off `g` with link `H F`, offset
/// `H b_p + b_e` and noise `S = H Q Hᵀ + R`, while the parent keeps `g`
/// with link `(I−KH) F`, offset `(I−KH) b_p + K (z − b_e)` and noise
/// `(I−KH) Q (I−KH)ᵀ + K R Kᵀ`, where `K = Q Hᵀ S⁻¹`.  The parent's
/// other children are untouched.
pub fn hoist_evidence<T: Real>(net: &NetworkSpec<T>, id: &NodeId) -> Result<NetworkSpec<T>> {
    if !net.contains(id) {
        return Err(Error::UnknownNode(id.clone()));
    }
    let Some(z) = net.evidence(id) else {
        return Err(Error::NoEvidence(id.clone()));
    };
    if !net.children_of(id).is_empty() {
        return Err(Error::UnsupportedReduction {
            node: id.clone(),
            reason: "has children; detach them first".into(),
        });
    }
    let parents = net.parents_of(id);
    let [(p, h)] = parents.as_slice() else {
        return Err(Error::UnsupportedReduction {
            node: id.clone(),
            reason: "needs exactly one parent".into(),
        });
    };
    let p = (*p).clone();
    if net.has_evidence(&p) {
        return Err(Error::UnsupportedReduction {
            node: id.clone(),
            reason: format!("parent `{p}` is observed; absorb instead"),
        });
    }
    let grandparents = net.parents_of(&p);
    let [(g, f_link)] = grandparents.as_slice() else {
        return Err(Error::UnsupportedReduction {
            node: id.clone(),
            reason: format!(
                "parent `{p}` has {} parents; hoisting needs exactly one",
                grandparents.len()
            ),
        });
    };
    let g = (*g).clone();
    let NodeKind::Internal {
        noise_cov: q_p,
        offset: b_p,
    } = &net.node(&p).expect("exists").kind
    else {
        unreachable!("a node with parents is internal");
    };
    let NodeKind::Internal {
        noise_cov: r,
        offset: b_e,
    } = &net.node(id).expect("exists").kind
    else {
        unreachable!("a node with parents is internal");
    };

    let d_p = b_p.len();
    let s = linalg::symmetrize(&(*h * q_p * h.transpose() + r));
    let f = linalg::SpdFactor::new(&s).ok_or(Error::SingularInnovationCovariance)?;
    // K = Q Hᵀ S⁻¹, computed as (S⁻¹ H Q)ᵀ.
    let k = f.solve_mat(&(*h * q_p)).transpose();
    let i_kh = DMatrix::identity(d_p, d_p) - &k * *h;

    let new_p_noise =
        linalg::symmetrize(&(&i_kh * q_p * i_kh.transpose() + &k * r * k.transpose()));
    let new_p_offset = &i_kh * b_p + &k * (z - b_e);
    let new_p_link = &i_kh * *f_link;

    let new_e_link = *h * *f_link;
    let new_e_offset = *h * b_p + b_e;
    let new_e_noise = s;

    let mut out = net.clone();
    out.links.remove(&(p.clone(), id.clone()));
    {
        let l = out
            .links
            .get_mut(&(g.clone(), p.clone()))
            .expect("grandparent link exists");
        l.matrix = new_p_link;
    }
    {
        let pn = out.nodes.get_mut(&p).expect("parent exists");
        let NodeKind::Internal { noise_cov, offset } = &mut pn.kind else {
            unreachable!()
        };
        *noise_cov = new_p_noise;
        *offset = new_p_offset;
    }
    {
        let en = out.nodes.get_mut(id).expect("exists");
        let NodeKind::Internal { noise_cov, offset } = &mut en.kind else {
            unreachable!()
        };
        *noise_cov = new_e_noise;
        *offset = new_e_offset;
    }
    out.add_link(g, id.clone(), new_e_link)?;
    Ok(out)
}

/// Reduces the network to the query posterior, recording every step.
///
/// Repeatedly applies the first matching rewrite — prune components not
/// containing the query, delete barren leaves, detach the children of
/// observed nodes, absorb or hoist childless observations, marginalize
/// single-child roots — until only the query remains as a root carrying
/// its posterior.  On a valid singly-connected network this always
/// terminates: every rewrite strictly shrinks the node count, the link
/// count, or the total depth of the observed nodes.
pub fn reduce<T: Real>(net: &NetworkSpec<T>, query: &NodeId) -> Result<Reduction<T>> {
    Ok(reduce_impl(net, query, false)?.0)
}

/// Like [`reduce`], additionally returning the intermediate network after
/// every step: `snapshots[0]` is the input, `snapshots[i]` the network
/// after `steps[i-1]`.
pub fn reduce_traced<T: Real>(
    net: &NetworkSpec<T>,
    query: &NodeId,
) -> Result<(Reduction<T>, Vec<NetworkSpec<T>>)> {
    reduce_impl(net, query, true)
}

fn reduce_impl<T: Real>(
    net: &NetworkSpec<T>,
    query: &NodeId,
    trace: bool,
) -> Result<(Reduction<T>, Vec<NetworkSpec<T>>)> {
    let report = net.validate();
    if !report.is_empty() {
        return Err(Error::InvalidNetwork(report));
    }
    if !net.contains(query) {
        return Err(Error::UnknownNode(query.clone()));
    }
    if net.has_evidence(query) {
        return Err(Error::HasEvidence(query.clone()));
    }

    let mut cur = net.clone();
    let mut steps: Vec<TransformStep> = Vec::new();
    let mut snapshots: Vec<NetworkSpec<T>> = Vec::new();
    if trace {
        snapshots.push(cur.clone());
    }

    'outer: loop {
        // Components not containing the query are independent of it.
        let component = cur.component_of(query);
        if component.len() < cur.len() {
            let outside: Vec<NodeId> = cur
                .node_ids()
                .filter(|id| !component.contains(*id))
                .cloned()
                .collect();
            cur = drop_nodes(&cur, &outside);
            push_step(
                &mut steps,
                &mut snapshots,
                &cur,
                trace,
                TransformKind::DropDisconnected,
                outside,
            );
            continue;
        }

        // Unobserved leaves other than the query are barren.
        let barren = cur
            .node_ids()
            .find(|id| *id != query && !cur.has_evidence(id) && cur.children_of(id).is_empty())
            .cloned();
        if let Some(x) = barren {
            cur = remove_barren(&cur, &x)?;
            push_step(
                &mut steps,
                &mut snapshots,
                &cur,
                trace,
                TransformKind::RemoveBarren,
                vec![x],
            );
            continue;
        }

        if cur.len() == 1 {
            break;
        }

        // Observed nodes with children: fold the value downstream.
        let pinned_parent = cur
            .evidence
            .keys()
            .find(|e| !cur.children_of(e).is_empty())
            .cloned();
        if let Some(e) = pinned_parent {
            let mut touched = vec![e.clone()];
            touched.extend(cur.children_of(&e).into_iter().map(|(c, _)| c.clone()));
            cur = detach_children(&cur, &e)?;
            push_step(
                &mut steps,
                &mut snapshots,
                &cur,
                trace,
                TransformKind::DetachChildren,
                touched,
            );
            continue;
        }

        // Childless observations: absorb where the shape allows, hoist
        // where the parent chain must be shortened first.
        let pinned: Vec<NodeId> = cur.evidence.keys().cloned().collect();
        for e in pinned {
            let parents: Vec<NodeId> = cur
                .parents_of(&e)
                .into_iter()
                .map(|(p, _)| p.clone())
                .collect();
            match parents.as_slice() {
                [] => {
                    cur = absorb_evidence(&cur, &e)?;
                    push_step(
                        &mut steps,
                        &mut snapshots,
                        &cur,
                        trace,
                        TransformKind::AbsorbEvidence,
                        vec![e],
                    );
                    continue 'outer;
                }
                [p] => {
                    let absorbable =
                        cur.has_evidence(p) || cur.node(p).expect("parent exists").is_root();
                    if absorbable {
                        let touched = vec![e.clone(), p.clone()];
                        cur = absorb_evidence(&cur, &e)?;
                        push_step(
                            &mut steps,
                            &mut snapshots,
                            &cur,
                            trace,
                            TransformKind::AbsorbEvidence,
                            touched,
                        );
                        continue 'outer;
                    }
                    if cur.parents_of(p).len() == 1 {
                        let g = cur.parents_of(p)[0].0.clone();
                        let touched = vec![e.clone(), p.clone(), g];
                        cur = hoist_evidence(&cur, &e)?;
                        push_step(
                            &mut steps,
                            &mut snapshots,
                            &cur,
                            trace,
                            TransformKind::HoistEvidence,
                            touched,
                        );
                        continue 'outer;
                    }
                }
                _ => {}
            }
        }

        // Unobserved single-child roots other than the query can be
        // marginalized into their child.
        let removable = cur.node_ids().find(|u| {
            *u != query
                && !cur.has_evidence(u)
                && cur.node(u).expect("exists").is_root()
                && cur.children_of(u).len() == 1
        });
        if let Some(u) = removable.cloned() {
            let c = cur.children_of(&u)[0].0.clone();
            cur = remove_parent(&cur, &u)?;
            push_step(
                &mut steps,
                &mut snapshots,
                &cur,
                trace,
                TransformKind::RemoveParent,
                vec![u, c],
            );
            continue;
        }

        // Unreachable on a valid singly-connected network: one of the
        // rules above always applies.  Kept as a guard against bugs.
        return Err(Error::UnsupportedReduction {
            node: query.clone(),
            reason: "no applicable reduction step".into(),
        });
    }

    let NodeKind::Root { prior } = &cur.node(query).expect("query survives").kind else {
        return Err(Error::UnsupportedReduction {
            node: query.clone(),
            reason: "reduction finished with a non-root query".into(),
        });
    };
    let posterior = prior.clone();
    Ok((
        Reduction {
            steps,
            network: cur,
            posterior,
        },
        snapshots,
    ))
}

/// Posterior marginal of `query` via full reduction.
pub fn posterior<T: Real>(net: &NetworkSpec<T>, query: &NodeId) -> Result<Gaussian<T>> {
    Ok(reduce(net, query)?.posterior)
}

fn push_step<T: Real>(
    steps: &mut Vec<TransformStep>,
    snapshots: &mut Vec<NetworkSpec<T>>,
    cur: &NetworkSpec<T>,
    trace: bool,
    kind: TransformKind,
    nodes: Vec<NodeId>,
) {
    steps.push(TransformStep { kind, nodes });
    if trace {
        snapshots.push(cur.clone());
    }
}

/// Posterior of `prior` given the observation `residual = H x + v`,
/// `v ~ N(0, R)`, in Joseph-stabilized form.
fn bayes_update<T: Real>(
    prior: &Gaussian<T>,
    h: &DMatrix<T>,
    r: &DMatrix<T>,
    residual: &nalgebra::DVector<T>,
) -> Result<Gaussian<T>> {
    let d = prior.dim();
    let s = linalg::symmetrize(&(h * prior.cov() * h.transpose() + r));
    let f = linalg::SpdFactor::new(&s).ok_or(Error::SingularInnovationCovariance)?;
    let k = f.solve_mat(&(h * prior.cov())).transpose();
    let innovation = residual - h * prior.mean();
    let mean = prior.mean() + &k * innovation;
    let i_kh = DMatrix::identity(d, d) - &k * h;
    let cov =
        linalg::symmetrize(&(&i_kh * prior.cov() * i_kh.transpose() + &k * r * k.transpose()));
    Gaussian::new(mean, cov)
}

/// Converts `id` into a root when its last parent has been removed,
/// promoting its accumulated offset and noise into a prior.
fn rootify_if_orphaned<T: Real>(net: &mut NetworkSpec<T>, id: &NodeId) -> Result<()> {
    if !net.parents_of(id).is_empty() {
        return Ok(());
    }
    let node = net.nodes.get_mut(id).expect("node exists");
    let NodeKind::Internal { noise_cov, offset } = &node.kind else {
        return Ok(());
    };
    node.kind = NodeKind::Root {
        prior: Gaussian::new(offset.clone(), noise_cov.clone())?,
    };
    Ok(())
}

fn drop_nodes<T: Real>(net: &NetworkSpec<T>, ids: &[NodeId]) -> NetworkSpec<T> {
    let gone: BTreeSet<&NodeId> = ids.iter().collect();
    let mut out = net.clone();
    out.links
        .retain(|_, l| !gone.contains(&l.from) && !gone.contains(&l.to));
    out.evidence.retain(|id, _| !gone.contains(id));
    out.nodes.retain(|id, _| !gone.contains(id));
    out
}
