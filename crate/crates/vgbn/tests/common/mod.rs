//! Shared helpers for the integration suites: seeded random generators
//! for networks and filter models, scale-aware error metrics, and a
//! quadrature rule for cross-checking closed-form constants.

#![allow(dead_code)]

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vgbn::{Gaussian, NetworkSpec, NodeId, Sensor, SystemModel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random symmetric positive definite matrix, comfortably conditioned.
pub fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let mut s = &a * a.transpose();
    for i in 0..d {
        s[(i, i)] += 0.5;
    }
    s
}

pub fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.random_range(-3.0..3.0))
}

pub fn random_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-2.0..2.0))
}

pub fn random_gaussian(rng: &mut ChaCha8Rng, d: usize) -> Gaussian {
    Gaussian::new(random_vec(rng, d), random_spd(rng, d)).unwrap()
}

/// Random singly-connected network: a uniformly attached undirected tree
/// with every edge oriented by a coin flip (any orientation of a tree is
/// acyclic and singly connected), node dimensions 1–4, random priors,
/// noises, and link matrices.  Up to `max_nodes` nodes, at least two.
pub fn random_polytree_sized(seed: u64, max_nodes: usize) -> NetworkSpec {
    let mut rng = rng(seed);
    let n = rng.random_range(2..=max_nodes);
    let dims: Vec<usize> = (0..n).map(|_| rng.random_range(1..=4)).collect();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for i in 1..n {
        let t = rng.random_range(0..i);
        if rng.random_bool(0.5) {
            edges.push((t, i));
        } else {
            edges.push((i, t));
        }
    }
    let id = |i: usize| format!("n{i}");
    let mut has_parent = vec![false; n];
    for &(_, c) in &edges {
        has_parent[c] = true;
    }
    let mut net: NetworkSpec = NetworkSpec::new();
    for i in 0..n {
        if has_parent[i] {
            net.add_internal(id(i), random_spd(&mut rng, dims[i]))
                .unwrap();
        } else {
            net.add_root(id(i), random_gaussian(&mut rng, dims[i]))
                .unwrap();
        }
    }
    for &(p, c) in &edges {
        net.add_link(id(p), id(c), random_mat(&mut rng, dims[c], dims[p]))
            .unwrap();
    }
    debug_assert!(net.validate().is_empty());
    net
}

pub fn random_polytree(seed: u64) -> NetworkSpec {
    random_polytree_sized(seed, 10)
}

/// Attaches evidence (random values) to a random nonempty subset of nodes.
pub fn with_random_evidence(net: &NetworkSpec, seed: u64) -> NetworkSpec {
    let mut rng = rng(seed);
    let ids: Vec<NodeId> = net.node_ids().cloned().collect();
    let mut chosen: Vec<NodeId> = ids
        .iter()
        .filter(|_| rng.random_bool(0.35))
        .cloned()
        .collect();
    if chosen.is_empty() {
        chosen.push(ids[rng.random_range(0..ids.len())].clone());
    }
    let mut out = net.clone();
    for id in &chosen {
        let d = out.node(id).unwrap().dim();
        let value = random_vec(&mut rng, d);
        out = out.attach_evidence(id, value).unwrap();
    }
    out
}

/// Random filter model: state dimension 1–4, contractive dynamics (so
/// long trajectories stay bounded), 1–3 sensors of dimension 1–2, and an
/// input matrix on a coin flip.
pub fn random_model(rng: &mut ChaCha8Rng) -> SystemModel {
    let d = rng.random_range(1..=4);
    let mut f = random_mat(rng, d, d);
    let norm = f.norm();
    if norm > 0.0 {
        f *= 0.95 / norm;
    }
    let g = if rng.random_bool(0.5) {
        let u = rng.random_range(1..=2);
        Some(random_mat(rng, d, u))
    } else {
        None
    };
    let q = random_spd(rng, d);
    let n_sensors = rng.random_range(1..=3);
    let sensors = (0..n_sensors)
        .map(|_| {
            let m = rng.random_range(1..=2);
            Sensor::new(random_mat(rng, m, d), random_spd(rng, m)).unwrap()
        })
        .collect();
    SystemModel::new(f, g, q, sensors).unwrap()
}

/// Scale-aware distance between two distributions: the larger of the mean
/// and covariance errors, each measured relative to the reference's size
/// (with a unit floor so near-zero references read as absolute error).
pub fn rel_err(a: &Gaussian, b: &Gaussian) -> f64 {
    let m = (a.mean() - b.mean()).norm() / (1.0 + b.mean().norm());
    let c = (a.cov() - b.cov()).norm() / (1.0 + b.cov().norm());
    m.max(c)
}

pub fn rel_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / (1.0 + b.norm())
}

pub fn rel_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / (1.0 + b.norm())
}

/// Largest absolute difference over both the means and the covariances.
pub fn max_abs_diff(a: &Gaussian, b: &Gaussian) -> f64 {
    let m = (a.mean() - b.mean()).amax();
    let c = (a.cov() - b.cov()).amax();
    m.max(c)
}

/// Composite Simpson rule with `2 * half` panels.
pub fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, half: usize) -> f64 {
    let n = 2 * half;
    let h = (hi - lo) / n as f64;
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + h * i as f64);
    }
    acc * h / 3.0
}

/// Every node reachable from `id` by following links downstream,
/// including `id` itself.
pub fn descendants(net: &NetworkSpec, id: &NodeId) -> BTreeSet<NodeId> {
    let mut seen = BTreeSet::from([id.clone()]);
    let mut stack = vec![id.clone()];
    while let Some(v) = stack.pop() {
        for (c, _) in net.children_of(&v) {
            if seen.insert(c.clone()) {
                stack.push(c.clone());
            }
        }
    }
    seen
}

/// Mean and covariance of the evidence-conditioned joint restricted to
/// `keep` (which must be unobserved nodes of `net`), assembled by brute
/// force so two networks can be compared block by block.
pub fn restricted_joint(net: &NetworkSpec, keep: &[NodeId]) -> (DVector<f64>, DMatrix<f64>) {
    let joint = vgbn::oracle::conditioned_joint(net).unwrap();
    let total: usize = keep.iter().map(|id| net.node(id).unwrap().dim()).sum();
    let mut mean = DVector::zeros(total);
    let mut cov = DMatrix::zeros(total, total);
    let mut ro = 0;
    for a in keep {
        let da = net.node(a).unwrap().dim();
        mean.rows_mut(ro, da)
            .copy_from(joint.marginal(a).unwrap().mean());
        let mut co = 0;
        for b in keep {
            let db = net.node(b).unwrap().dim();
            cov.view_mut((ro, co), (da, db))
                .copy_from(&joint.cross_cov(a, b).unwrap());
            co += db;
        }
        ro += da;
    }
    (mean, cov)
}
