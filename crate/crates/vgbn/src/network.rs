//! Network structure: nodes, links, evidence, validation, and clustering.
//!
//! A [`NetworkSpec`] is a declarative description of a Gaussian network.
//! Construction is permissive — structurally broken networks can be built
//! and then inspected — and [`NetworkSpec::validate`] reports every
//! violation.  The inference engines require a clean report (the oracle
//! skips only the singly-connectedness check, since brute force works on
//! any DAG).
//!
//! Specs behave as immutable values from the point of view of the
//! transformation layer: operations like [`NetworkSpec::attach_evidence`]
//! and [`NetworkSpec::cluster`] return updated copies.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::gaussian::Gaussian;
use crate::linalg::{self, PSD_TOL, SYM_TOL};
use crate::{Error, NodeId, Real, Result};

/// What a node contributes to the joint distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind<T = f64> {
    /// Parentless node with an explicit prior.  A zero-covariance prior is
    /// legal and models a deterministic input.
    Root { prior: Gaussian<T> },
    /// Node defined by its parents: `x = Σ Bᵢ uᵢ + offset + v`,
    /// `v ~ N(0, noise_cov)`.  The offset starts at zero and only becomes
    /// nonzero through network transformations that fold a removed parent's
    /// mean contribution into its children.
    Internal {
        noise_cov: DMatrix<T>,
        offset: DVector<T>,
    },
}

/// One node of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec<T = f64> {
    pub id: NodeId,
    pub kind: NodeKind<T>,
}

impl<T: Real> NodeSpec<T> {
    pub fn root(id: impl Into<NodeId>, prior: Gaussian<T>) -> Self {
        NodeSpec {
            id: id.into(),
            kind: NodeKind::Root { prior },
        }
    }

    pub fn internal(id: impl Into<NodeId>, noise_cov: DMatrix<T>) -> Self {
        let d = noise_cov.nrows();
        NodeSpec {
            id: id.into(),
            kind: NodeKind::Internal {
                noise_cov,
                offset: DVector::zeros(d),
            },
        }
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            NodeKind::Root { prior } => prior.dim(),
            NodeKind::Internal { noise_cov, .. } => noise_cov.nrows(),
        }
    }

    pub fn is_root(&self) -> bool {
        matches!(self.kind, NodeKind::Root { .. })
    }
}

/// Directed link `from → to` with its `dim(to) × dim(from)` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkSpec<T = f64> {
    pub from: NodeId,
    pub to: NodeId,
    pub matrix: DMatrix<T>,
}

/// A single validation failure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// The directed graph contains a cycle.
    Cycle,
    /// The undirected skeleton contains a cycle, i.e. two distinct paths
    /// exist between some pair of nodes.
    NotSinglyConnected,
    /// A link endpoint names no node.
    OrphanLink { from: NodeId, to: NodeId },
    /// A link from a node to itself.
    SelfLink { node: NodeId },
    /// Link matrix shape does not match its endpoints' dimensions.
    LinkShape { from: NodeId, to: NodeId },
    /// Noise covariance is non-square, asymmetric, or not PSD.
    BadNoise { node: NodeId },
    /// Internal offset length differs from the node dimension.
    OffsetDim { node: NodeId },
    /// A root node has incoming links.
    RootWithParents { node: NodeId },
    /// A non-root node has no incoming links.
    InternalWithoutParents { node: NodeId },
    /// Evidence attached to an id that names no node.
    EvidenceUnknown { node: NodeId },
    /// Evidence vector length differs from the node dimension.
    EvidenceDim { node: NodeId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Cycle => write!(f, "directed cycle"),
            Violation::NotSinglyConnected => {
                write!(f, "not singly connected: multiple undirected paths")
            }
            Violation::OrphanLink { from, to } => {
                write!(f, "link `{from}` -> `{to}` references a missing node")
            }
            Violation::SelfLink { node } => write!(f, "self link on `{node}`"),
            Violation::LinkShape { from, to } => {
                write!(f, "link `{from}` -> `{to}` has wrong matrix shape")
            }
            Violation::BadNoise { node } => {
                write!(f, "noise covariance of `{node}` is not symmetric PSD")
            }
            Violation::OffsetDim { node } => {
                write!(f, "offset of `{node}` has wrong length")
            }
            Violation::RootWithParents { node } => {
                write!(f, "root `{node}` has incoming links")
            }
            Violation::InternalWithoutParents { node } => {
                write!(f, "non-root `{node}` has no parents")
            }
            Violation::EvidenceUnknown { node } => {
                write!(f, "evidence on unknown node `{node}`")
            }
            Violation::EvidenceDim { node } => {
                write!(f, "evidence on `{node}` has wrong length")
            }
        }
    }
}

/// Every violation found by [`NetworkSpec::validate`]; empty means valid.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }

    /// Whether the only failures concern singly-connectedness.  The joint
    /// oracle accepts such networks; message propagation does not.
    pub fn only_connectivity(&self) -> bool {
        self.violations
            .iter()
            .all(|v| matches!(v, Violation::NotSinglyConnected))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "- {v}")?;
        }
        Ok(())
    }
}

/// Declarative description of a Gaussian network.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NetworkSpec<T = f64> {
    pub(crate) nodes: BTreeMap<NodeId, NodeSpec<T>>,
    pub(crate) links: BTreeMap<(NodeId, NodeId), LinkSpec<T>>,
    pub(crate) evidence: BTreeMap<NodeId, DVector<T>>,
}

impl<T: Real> NetworkSpec<T> {
    pub fn new() -> Self {
        NetworkSpec {
            nodes: BTreeMap::new(),
            links: BTreeMap::new(),
            evidence: BTreeMap::new(),
        }
    }

    // ----- construction -------------------------------------------------

    pub fn add_node(&mut self, node: NodeSpec<T>) -> Result<()> {
        if node.dim() == 0 {
            return Err(Error::EmptyDimension);
        }
        if self.nodes.contains_key(&node.id) {
            return Err(Error::DuplicateNode(node.id));
        }
        self.nodes.insert(node.id.clone(), node);
        Ok(())
    }

    pub fn add_root(&mut self, id: impl Into<NodeId>, prior: Gaussian<T>) -> Result<()> {
        self.add_node(NodeSpec::root(id, prior))
    }

    pub fn add_internal(&mut self, id: impl Into<NodeId>, noise_cov: DMatrix<T>) -> Result<()> {
        if noise_cov.nrows() != noise_cov.ncols() {
            return Err(Error::DimMismatch {
                expected: noise_cov.nrows(),
                got: noise_cov.ncols(),
            });
        }
        self.add_node(NodeSpec::internal(id, noise_cov))
    }

    pub fn add_link(
        &mut self,
        from: impl Into<NodeId>,
        to: impl Into<NodeId>,
        matrix: DMatrix<T>,
    ) -> Result<()> {
        let from = from.into();
        let to = to.into();
        let key = (from.clone(), to.clone());
        if self.links.contains_key(&key) {
            return Err(Error::DuplicateLink { from, to });
        }
        self.links.insert(key, LinkSpec { from, to, matrix });
        Ok(())
    }

    // ----- accessors ----------------------------------------------------

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn node(&self, id: &NodeId) -> Option<&NodeSpec<T>> {
        self.nodes.get(id)
    }

    /// Nodes in lexicographic id order.
    pub fn nodes(&self) -> impl Iterator<Item = &NodeSpec<T>> {
        self.nodes.values()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = &NodeId> {
        self.nodes.keys()
    }

    /// Links in lexicographic `(from, to)` order.
    pub fn links(&self) -> impl Iterator<Item = &LinkSpec<T>> {
        self.links.values()
    }

    pub fn link(&self, from: &NodeId, to: &NodeId) -> Option<&DMatrix<T>> {
        self.links
            .get(&(from.clone(), to.clone()))
            .map(|l| &l.matrix)
    }

    pub fn evidence(&self, id: &NodeId) -> Option<&DVector<T>> {
        self.evidence.get(id)
    }

    pub fn evidence_nodes(&self) -> impl Iterator<Item = (&NodeId, &DVector<T>)> {
        self.evidence.iter()
    }

    pub fn has_evidence(&self, id: &NodeId) -> bool {
        self.evidence.contains_key(id)
    }

    /// Parents of `id` with their link matrices, sorted by parent id.
    pub fn parents_of(&self, id: &NodeId) -> Vec<(&NodeId, &DMatrix<T>)> {
        self.links
            .values()
            .filter(|l| &l.to == id)
            .map(|l| (&l.from, &l.matrix))
            .collect()
    }

    /// Children of `id` with their link matrices, sorted by child id.
    pub fn children_of(&self, id: &NodeId) -> Vec<(&NodeId, &DMatrix<T>)> {
        let mut out: Vec<_> = self
            .links
            .values()
            .filter(|l| &l.from == id)
            .map(|l| (&l.to, &l.matrix))
            .collect();
        out.sort_by_key(|(id, _)| (*id).clone());
        out
    }

    /// Undirected neighbours (parents and children), sorted, deduplicated.
    pub fn neighbors(&self, id: &NodeId) -> Vec<&NodeId> {
        let mut out: BTreeSet<&NodeId> = BTreeSet::new();
        for l in self.links.values() {
            if &l.from == id {
                out.insert(&l.to);
            } else if &l.to == id {
                out.insert(&l.from);
            }
        }
        out.into_iter().collect()
    }

    /// All nodes reachable from `id` along undirected links, including `id`.
    pub fn component_of(&self, id: &NodeId) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::new();
        if !self.contains(id) {
            return seen;
        }
        let mut queue = VecDeque::from([id.clone()]);
        seen.insert(id.clone());
        while let Some(v) = queue.pop_front() {
            for n in self.neighbors(&v) {
                if seen.insert(n.clone()) {
                    queue.push_back(n.clone());
                }
            }
        }
        seen
    }

    /// Topological order with lexicographic tie-breaking (Kahn's algorithm
    /// drawing the smallest available id first).  Fails on a cyclic graph.
    pub fn topo_order(&self) -> Result<Vec<NodeId>> {
        let mut indegree: BTreeMap<&NodeId, usize> = self.nodes.keys().map(|id| (id, 0)).collect();
        for l in self.links.values() {
            if let Some(d) = indegree.get_mut(&l.to) {
                if self.nodes.contains_key(&l.from) && l.from != l.to {
                    *d += 1;
                }
            }
        }
        let mut ready: BTreeSet<&NodeId> = indegree
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&id, _)| id)
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(&id) = ready.iter().next() {
            ready.remove(id);
            order.push(id.clone());
            for (child, _) in self.children_of(id) {
                if let Some(d) = indegree.get_mut(child) {
                    if *d > 0 {
                        *d -= 1;
                        if *d == 0 {
                            ready.insert(child);
                        }
                    }
                }
            }
        }
        if order.len() == self.nodes.len() {
            Ok(order)
        } else {
            Err(Error::InvalidNetwork(ValidationReport {
                violations: vec![Violation::Cycle],
            }))
        }
    }

    // ----- evidence -----------------------------------------------------

    /// Returns a copy with `value` attached as evidence on `id`.  Attaching
    /// twice replaces the previous value.
    pub fn attach_evidence(&self, id: &NodeId, value: DVector<T>) -> Result<NetworkSpec<T>> {
        let node = self
            .node(id)
            .ok_or_else(|| Error::UnknownNode(id.clone()))?;
        if value.len() != node.dim() {
            return Err(Error::DimMismatch {
                expected: node.dim(),
                got: value.len(),
            });
        }
        if !linalg::all_finite_vec(&value) {
            return Err(Error::NonFinite);
        }
        let mut out = self.clone();
        out.evidence.insert(id.clone(), value);
        Ok(out)
    }

    /// Returns a copy with any evidence on `id` removed.  Clearing a node
    /// that carries none is a no-op.
    pub fn clear_evidence(&self, id: &NodeId) -> Result<NetworkSpec<T>> {
        if !self.contains(id) {
            return Err(Error::UnknownNode(id.clone()));
        }
        let mut out = self.clone();
        out.evidence.remove(id);
        Ok(out)
    }

    // ----- validation ---------------------------------------------------

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();

        for node in self.nodes.values() {
            match &node.kind {
                NodeKind::Root { .. } => {}
                NodeKind::Internal { noise_cov, offset } => {
                    let d = noise_cov.nrows();
                    let ok = noise_cov.ncols() == d
                        && linalg::all_finite_mat(noise_cov)
                        && linalg::is_symmetric(noise_cov, SYM_TOL)
                        && linalg::check_psd(noise_cov, PSD_TOL).is_ok();
                    if !ok {
                        violations.push(Violation::BadNoise {
                            node: node.id.clone(),
                        });
                    }
                    if offset.len() != d {
                        violations.push(Violation::OffsetDim {
                            node: node.id.clone(),
                        });
                    }
                }
            }
        }

        let mut resolved_links = Vec::new();
        for l in self.links.values() {
            if l.from == l.to {
                violations.push(Violation::SelfLink {
                    node: l.from.clone(),
                });
                continue;
            }
            let (from, to) = (self.node(&l.from), self.node(&l.to));
            match (from, to) {
                (Some(f), Some(t)) => {
                    if l.matrix.nrows() != t.dim() || l.matrix.ncols() != f.dim() {
                        violations.push(Violation::LinkShape {
                            from: l.from.clone(),
                            to: l.to.clone(),
                        });
                    }
                    if !linalg::all_finite_mat(&l.matrix) {
                        violations.push(Violation::LinkShape {
                            from: l.from.clone(),
                            to: l.to.clone(),
                        });
                    }
                    resolved_links.push(l);
                }
                _ => violations.push(Violation::OrphanLink {
                    from: l.from.clone(),
                    to: l.to.clone(),
                }),
            }
        }

        // Role consistency.
        for node in self.nodes.values() {
            let has_parents = resolved_links.iter().any(|l| l.to == node.id);
            match (&node.kind, has_parents) {
                (NodeKind::Root { .. }, true) => violations.push(Violation::RootWithParents {
                    node: node.id.clone(),
                }),
                (NodeKind::Internal { .. }, false) => {
                    violations.push(Violation::InternalWithoutParents {
                        node: node.id.clone(),
                    })
                }
                _ => {}
            }
        }

        // Directed acyclicity.
        if self.topo_order().is_err() {
            violations.push(Violation::Cycle);
        }

        // Singly-connectedness: the undirected skeleton must be a forest.
        let ids: Vec<&NodeId> = self.nodes.keys().collect();
        let index: BTreeMap<&NodeId, usize> =
            ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut dsu: Vec<usize> = (0..ids.len()).collect();
        fn find(dsu: &mut Vec<usize>, i: usize) -> usize {
            if dsu[i] != i {
                let r = find(dsu, dsu[i]);
                dsu[i] = r;
            }
            dsu[i]
        }
        let mut multiply_connected = false;
        for l in &resolved_links {
            let (a, b) = (index[&l.from], index[&l.to]);
            let (ra, rb) = (find(&mut dsu, a), find(&mut dsu, b));
            if ra == rb {
                multiply_connected = true;
            } else {
                dsu[ra] = rb;
            }
        }
        if multiply_connected {
            violations.push(Violation::NotSinglyConnected);
        }

        // Evidence consistency.
        for (id, value) in &self.evidence {
            match self.node(id) {
                None => violations.push(Violation::EvidenceUnknown { node: id.clone() }),
                Some(n) if n.dim() != value.len() => {
                    violations.push(Violation::EvidenceDim { node: id.clone() })
                }
                _ => {}
            }
        }

        ValidationReport { violations }
    }

    // ----- clustering ---------------------------------------------------

    /// Merges the listed nodes into one composite node of summed dimension,
    /// in the given order.  The composite id is the member ids joined with
    /// `+`.  Member priors/noises become block-diagonal; links to a shared
    /// neighbour are stacked, with zero blocks for members that lacked the
    /// link.  A cluster of one node leaves the network unchanged.
    ///
    /// The merge is joint-preserving when the members are independent given
    /// the rest of the network — all roots, or internal nodes with no links
    /// among themselves.  Evidence must cover all members or none.
    pub fn cluster(&self, ids: &[NodeId]) -> Result<NetworkSpec<T>> {
        if ids.is_empty() {
            return Err(Error::ClusterInvalid("empty member list".into()));
        }
        for (i, id) in ids.iter().enumerate() {
            if !self.contains(id) {
                return Err(Error::ClusterInvalid(format!("unknown node `{id}`")));
            }
            if ids[..i].contains(id) {
                return Err(Error::ClusterInvalid(format!("duplicate member `{id}`")));
            }
        }
        if ids.len() == 1 {
            return Ok(self.clone());
        }

        let members: Vec<&NodeSpec<T>> = ids.iter().map(|id| &self.nodes[id]).collect();
        let all_roots = members.iter().all(|n| n.is_root());
        let all_internal = members.iter().all(|n| !n.is_root());
        if !all_roots && !all_internal {
            return Err(Error::ClusterInvalid(
                "cannot mix root and non-root members".into(),
            ));
        }
        for l in self.links.values() {
            if ids.contains(&l.from) && ids.contains(&l.to) {
                return Err(Error::ClusterInvalid(format!(
                    "link `{}` -> `{}` connects two members",
                    l.from, l.to
                )));
            }
        }
        let with_evidence = ids.iter().filter(|id| self.has_evidence(id)).count();
        if with_evidence != 0 && with_evidence != ids.len() {
            return Err(Error::ClusterInvalid(
                "evidence covers only part of the cluster".into(),
            ));
        }

        let composite = NodeId::new(
            ids.iter()
                .map(|id| id.as_str())
                .collect::<Vec<_>>()
                .join("+"),
        );
        if self.contains(&composite) && !ids.contains(&composite) {
            return Err(Error::ClusterInvalid(format!(
                "composite id `{composite}` already names a node"
            )));
        }

        let dims: Vec<usize> = members.iter().map(|n| n.dim()).collect();
        let offsets: Vec<usize> = dims
            .iter()
            .scan(0, |acc, d| {
                let o = *acc;
                *acc += d;
                Some(o)
            })
            .collect();
        let total: usize = dims.iter().sum();

        let kind = if all_roots {
            let mut mean = DVector::zeros(total);
            let mut cov = DMatrix::zeros(total, total);
            for (i, m) in members.iter().enumerate() {
                let NodeKind::Root { prior } = &m.kind else {
                    unreachable!()
                };
                mean.rows_mut(offsets[i], dims[i]).copy_from(prior.mean());
                cov.view_mut((offsets[i], offsets[i]), (dims[i], dims[i]))
                    .copy_from(prior.cov());
            }
            NodeKind::Root {
                prior: Gaussian::new(mean, cov)?,
            }
        } else {
            let mut noise = DMatrix::zeros(total, total);
            let mut off = DVector::zeros(total);
            for (i, m) in members.iter().enumerate() {
                let NodeKind::Internal { noise_cov, offset } = &m.kind else {
                    unreachable!()
                };
                noise
                    .view_mut((offsets[i], offsets[i]), (dims[i], dims[i]))
                    .copy_from(noise_cov);
                off.rows_mut(offsets[i], dims[i]).copy_from(offset);
            }
            NodeKind::Internal {
                noise_cov: noise,
                offset: off,
            }
        };

        let mut out = NetworkSpec::new();
        for node in self.nodes.values() {
            if !ids.contains(&node.id) {
                out.nodes.insert(node.id.clone(), node.clone());
            }
        }
        out.nodes.insert(
            composite.clone(),
            NodeSpec {
                id: composite.clone(),
                kind,
            },
        );

        // Incoming: stack member links from each outside parent vertically.
        // Outgoing: stack member links to each outside child horizontally.
        let mut incoming: BTreeMap<NodeId, DMatrix<T>> = BTreeMap::new();
        let mut outgoing: BTreeMap<NodeId, DMatrix<T>> = BTreeMap::new();
        for l in self.links.values() {
            if let Some(i) = ids.iter().position(|id| id == &l.to) {
                let pdim = self.nodes[&l.from].dim();
                let stacked = incoming
                    .entry(l.from.clone())
                    .or_insert_with(|| DMatrix::zeros(total, pdim));
                stacked
                    .view_mut((offsets[i], 0), (dims[i], pdim))
                    .copy_from(&l.matrix);
            } else if let Some(i) = ids.iter().position(|id| id == &l.from) {
                let cdim = self.nodes[&l.to].dim();
                let stacked = outgoing
                    .entry(l.to.clone())
                    .or_insert_with(|| DMatrix::zeros(cdim, total));
                stacked
                    .view_mut((0, offsets[i]), (cdim, dims[i]))
                    .copy_from(&l.matrix);
            } else {
                out.links.insert((l.from.clone(), l.to.clone()), l.clone());
            }
        }
        for (from, matrix) in incoming {
            out.links.insert(
                (from.clone(), composite.clone()),
                LinkSpec {
                    from,
                    to: composite.clone(),
                    matrix,
                },
            );
        }
        for (to, matrix) in outgoing {
            out.links.insert(
                (composite.clone(), to.clone()),
                LinkSpec {
                    from: composite.clone(),
                    to,
                    matrix,
                },
            );
        }

        for (id, value) in &self.evidence {
            if !ids.contains(id) {
                out.evidence.insert(id.clone(), value.clone());
            }
        }
        if with_evidence == ids.len() {
            let mut stacked = DVector::zeros(total);
            for (i, id) in ids.iter().enumerate() {
                stacked
                    .rows_mut(offsets[i], dims[i])
                    .copy_from(&self.evidence[id]);
            }
            out.evidence.insert(composite.clone(), stacked);
        }

        // The merge must not break (or leave broken) the structural rules.
        let broken = out.validate().violations.into_iter().any(|v| {
            matches!(
                v,
                Violation::Cycle | Violation::NotSinglyConnected | Violation::SelfLink { .. }
            )
        });
        if broken {
            return Err(Error::ClusterInvalid(
                "merged network is not singly connected".into(),
            ));
        }
        Ok(out)
    }
}
