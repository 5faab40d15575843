//! End-to-end acceptance checks.  Each test covers one headline
//! requirement with a pinned tolerance and prints a single PASS line on
//! success (run with `--nocapture` to see them); a failure panics with
//! the offending case and measured error.

mod common;

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{dmatrix, dvector, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use vgbn::propagation::{self, NodeLambda};
use vgbn::{gaussian, kalman, oracle, transform};
use vgbn::{
    Gaussian, InfoForm, ModelSequence, NetworkSpec, NodeId, NodeKind, Sensor, SystemModel,
    UpdateMode,
};

/// Seeds shared by the network-suite tests so they all exercise the same
/// 100 random cases.
fn suite_network(case: u64) -> NetworkSpec {
    common::with_random_evidence(&common::random_polytree(1_000 + case), 5_000 + case)
}

#[test]
fn propagation_matches_exact_conditioning() {
    let start = Instant::now();
    let mut worst = 0.0_f64;
    for case in 0..100 {
        let net = suite_network(case);
        let prop = propagation::propagate(&net).unwrap();
        for id in net.node_ids() {
            if net.has_evidence(id) {
                continue;
            }
            let want = oracle::exact_posterior(&net, id).unwrap();
            let got = prop.belief(id).unwrap();
            let err = common::rel_err(got, &want);
            assert!(
                err < 1e-8,
                "case {case}, node {id}: relative error {err:.3e}"
            );
            worst = worst.max(err);
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "suite took {elapsed:?}");
    println!(
        "PASS: message propagation matches exact conditioning on 100 random networks \
         (worst relative error {worst:.3e} < 1e-8, {elapsed:.2?} < 10s)"
    );
}

#[test]
fn reduction_matches_propagation_and_preserves_joints() {
    let mut worst_backend = 0.0_f64;
    let mut worst_step = 0.0_f64;
    for case in 0..100 {
        let net = suite_network(case);
        let prop = propagation::propagate(&net).unwrap();
        let queries: Vec<NodeId> = net
            .node_ids()
            .filter(|id| !net.has_evidence(id))
            .cloned()
            .collect();
        for q in &queries {
            let red = transform::posterior(&net, q).unwrap();
            let err = common::rel_err(&red, prop.belief(q).unwrap());
            assert!(
                err < 1e-8,
                "case {case}, query {q}: backends differ by {err:.3e}"
            );
            worst_backend = worst_backend.max(err);
        }
        // Every individual rewrite must leave the conditioned joint over
        // the surviving unobserved nodes untouched.
        if let Some(q) = queries.first() {
            let (red, snaps) = transform::reduce_traced(&net, q).unwrap();
            assert_eq!(snaps.len(), red.steps.len() + 1);
            for (i, w) in snaps.windows(2).enumerate() {
                let keep: Vec<NodeId> = w[1]
                    .node_ids()
                    .filter(|id| w[0].contains(id))
                    .filter(|id| !w[0].has_evidence(id) && !w[1].has_evidence(id))
                    .cloned()
                    .collect();
                if keep.is_empty() {
                    continue;
                }
                let (m0, c0) = common::restricted_joint(&w[0], &keep);
                let (m1, c1) = common::restricted_joint(&w[1], &keep);
                let err = common::rel_vec(&m1, &m0).max(common::rel_mat(&c1, &c0));
                assert!(
                    err < 1e-10,
                    "case {case}, step {} ({}): joint drifted by {err:.3e}",
                    i + 1,
                    red.steps[i]
                );
                worst_step = worst_step.max(err);
            }
        }
    }
    println!(
        "PASS: network reduction matches propagation on the same 100 networks \
         (worst {worst_backend:.3e} < 1e-8) and every rewrite preserves the \
         restricted joint (worst {worst_step:.3e} < 1e-10)"
    );
}

#[test]
fn filter_update_modes_agree() {
    let mut worst = 0.0_f64;
    for case in 0..20 {
        let mut r = common::rng(7_000 + case);
        let model = common::random_model(&mut r);
        let d = model.state_dim();
        let init = common::random_gaussian(&mut r, d);
        let steps = 100;
        let controls: Vec<DVector<f64>> = match model.control_dim() {
            Some(u) => (0..steps).map(|_| common::random_vec(&mut r, u)).collect(),
            None => vec![],
        };
        let seq = ModelSequence::Constant(model);
        let sim = kalman::simulate(&seq, &init, steps, &controls, 9_000 + case).unwrap();
        let data = sim.to_steps(&controls);
        let a = kalman::run_filter(&seq, &init, &data, UpdateMode::Centralized).unwrap();
        let b = kalman::run_filter(&seq, &init, &data, UpdateMode::Decentralized).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            let diff = common::max_abs_diff(&x.estimate, &y.estimate);
            assert!(
                diff < 1e-9,
                "case {case}, step {}: trajectories differ by {diff:.3e}",
                x.k
            );
            worst = worst.max(diff);
        }
    }
    println!(
        "PASS: centralized and decentralized filter trajectories agree on 20 random \
         models over 100 steps (max abs difference {worst:.3e} < 1e-9)"
    );
}

#[test]
fn scalar_filter_reaches_golden_variance() {
    let model = SystemModel::new(
        dmatrix![1.0],
        None,
        dmatrix![1.0],
        vec![Sensor::new(dmatrix![1.0], dmatrix![1.0]).unwrap()],
    )
    .unwrap();
    let z = dvector![0.0];
    let mut est: Gaussian = Gaussian::standard(1);
    let mut settled_at = None;
    for k in 1..=50 {
        let predicted = kalman::predict(&model, &est, None).unwrap();
        est = kalman::update_decentralized(&predicted, &[(&model.sensors()[0], &z)]).unwrap();
        if (est.cov()[(0, 0)] - 0.618034).abs() <= 1e-6 {
            settled_at = Some(k);
            break;
        }
    }
    let k = settled_at.expect("posterior variance did not settle within 50 steps");
    println!(
        "PASS: unit scalar model settles at posterior variance 0.618034 ± 1e-6 \
         (reached at step {k} ≤ 50)"
    );
}

#[test]
fn closed_form_algebra_matches_numeric_oracles() {
    let mut r = common::rng(11);

    // Normalization constant of a 1-D density product vs quadrature.
    let mut worst_quad = 0.0_f64;
    for _ in 0..10 {
        let g1 = common::random_gaussian(&mut r, 1);
        let g2 = common::random_gaussian(&mut r, 1);
        let (_, a) = gaussian::product(&g1, &g2).unwrap();
        let numeric = common::simpson(
            |x| {
                let v = dvector![x];
                g1.pdf(&v).unwrap() * g2.pdf(&v).unwrap()
            },
            -60.0,
            60.0,
            20_000,
        );
        let err = (a - numeric).abs();
        assert!(err < 1e-6, "product constant off by {err:.3e}");
        worst_quad = worst_quad.max(err);
    }

    // The two algebraic product routes agree on random PD inputs.
    let mut worst_routes = 0.0_f64;
    for d in 1..=5 {
        for _ in 0..10 {
            let g1 = common::random_gaussian(&mut r, d);
            let g2 = common::random_gaussian(&mut r, d);
            let (p1, a1) = gaussian::product(&g1, &g2).unwrap();
            let (p2, a2) = gaussian::product_covariance_form(&g1, &g2).unwrap();
            let err = common::max_abs_diff(&p1, &p2).max((a1 - a2).abs());
            assert!(err < 1e-10, "dim {d}: product routes differ by {err:.3e}");
            worst_routes = worst_routes.max(err);
        }
    }

    // Linear-combination marginal vs Monte Carlo moments.
    let b1 = dmatrix![1.3];
    let b2 = dmatrix![-0.5];
    let u1 = Gaussian::new(dvector![0.7], dmatrix![1.1]).unwrap();
    let u2 = Gaussian::new(dvector![-1.2], dmatrix![0.6]).unwrap();
    let q = dmatrix![0.8];
    let closed = gaussian::marginalize_linear(&[(&b1, &u1), (&b2, &u2)], &q).unwrap();
    let n = 1_000_000_usize;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut mc = common::rng(123);
    for _ in 0..n {
        let e1: f64 = mc.sample(StandardNormal);
        let e2: f64 = mc.sample(StandardNormal);
        let ew: f64 = mc.sample(StandardNormal);
        let x = 1.3 * (0.7 + 1.1_f64.sqrt() * e1) - 0.5 * (-1.2 + 0.6_f64.sqrt() * e2)
            + 0.8_f64.sqrt() * ew;
        sum += x;
        sum_sq += x * x;
    }
    let mc_mean = sum / n as f64;
    let mc_var = sum_sq / n as f64 - mc_mean * mc_mean;
    let true_var = closed.cov()[(0, 0)];
    let se_mean = (true_var / n as f64).sqrt();
    let se_var = true_var * (2.0 / n as f64).sqrt();
    let mean_err = (mc_mean - closed.mean()[0]).abs();
    let var_err = (mc_var - true_var).abs();
    assert!(
        mean_err < 3.0 * se_mean,
        "marginal mean {mean_err:.3e} beyond 3 standard errors ({:.3e})",
        3.0 * se_mean
    );
    assert!(
        var_err < 3.0 * se_var,
        "marginal variance {var_err:.3e} beyond 3 standard errors ({:.3e})",
        3.0 * se_var
    );

    println!(
        "PASS: closed-form algebra matches numeric oracles — product constant vs \
         quadrature ({worst_quad:.3e} < 1e-6), product routes vs each other \
         ({worst_routes:.3e} < 1e-10), linear marginal vs 10^6-sample Monte Carlo \
         (mean {:.2} SE, variance {:.2} SE, both < 3)",
        mean_err / se_mean,
        var_err / se_var
    );
}

#[test]
fn upstream_message_routes_cross_validate() {
    // Both routes on 50 random nodes whose potential is invertible.
    let mut worst_dual = 0.0_f64;
    for case in 0..50 {
        let mut r = common::rng(13_000 + case);
        let n_parents = r.random_range(1..=3);
        let dx = r.random_range(1..=3);
        let mut net: NetworkSpec = NetworkSpec::new();
        let mut others = BTreeMap::new();
        for i in 0..n_parents {
            let dp = r.random_range(1..=3);
            let id = format!("p{i}");
            net.add_root(id.clone(), common::random_gaussian(&mut r, dp))
                .unwrap();
            if i > 0 {
                others.insert(NodeId::from(id), common::random_gaussian(&mut r, dp));
            }
        }
        net.add_internal("x", common::random_spd(&mut r, dx))
            .unwrap();
        for i in 0..n_parents {
            let dp = net.node(&NodeId::from(format!("p{i}"))).unwrap().dim();
            net.add_link(format!("p{i}"), "x", common::random_mat(&mut r, dx, dp))
                .unwrap();
        }
        let lam = InfoForm::new(
            common::random_spd(&mut r, dx),
            common::random_vec(&mut r, dx),
        )
        .unwrap();
        let x = NodeId::from("x");
        let target = NodeId::from("p0");
        let a = propagation::message_to_parent_covariance_form(
            &net,
            &x,
            &target,
            &lam.to_moment().unwrap(),
            &others,
        )
        .unwrap();
        let b =
            propagation::message_to_parent_factored_form(&net, &x, &target, &lam, &others).unwrap();
        let err = (a.prec() - b.prec())
            .amax()
            .max((a.info() - b.info()).amax());
        assert!(
            err < 1e-9,
            "case {case}: message routes differ by {err:.3e}"
        );
        worst_dual = worst_dual.max(err);
    }

    // Rank-deficient potentials, where only the factored route applies:
    // push the message into the parent's prior and compare against exact
    // conditioning.
    let mut worst_singular = 0.0_f64;
    for case in 0..10 {
        let mut r = common::rng(17_000 + case);
        let mut net: NetworkSpec = NetworkSpec::new();
        net.add_root("u", common::random_gaussian(&mut r, 2))
            .unwrap();
        net.add_internal("x", common::random_spd(&mut r, 2))
            .unwrap();
        net.add_internal("y", common::random_spd(&mut r, 1))
            .unwrap();
        net.add_link("u", "x", common::random_mat(&mut r, 2, 2))
            .unwrap();
        net.add_link("x", "y", common::random_mat(&mut r, 1, 2))
            .unwrap();
        let z = common::random_vec(&mut r, 1);
        let net = net.attach_evidence(&NodeId::from("y"), z.clone()).unwrap();

        // The potential x receives from its single observed child has
        // rank one in a two-dimensional state: singular by construction.
        let h = net.link(&NodeId::from("x"), &NodeId::from("y")).unwrap();
        let r_y = match &net.node(&NodeId::from("y")).unwrap().kind {
            NodeKind::Internal { noise_cov, .. } => noise_cov.clone(),
            NodeKind::Root { .. } => unreachable!(),
        };
        let lam_x =
            gaussian::pullback(h, &Gaussian::new(z, r_y).unwrap(), &DVector::zeros(1)).unwrap();
        assert!(lam_x.to_moment().is_err(), "potential should be singular");

        let u = NodeId::from("u");
        let msg = propagation::message_to_parent_factored_form(
            &net,
            &NodeId::from("x"),
            &u,
            &lam_x,
            &BTreeMap::new(),
        )
        .unwrap();
        let prior = match &net.node(&u).unwrap().kind {
            NodeKind::Root { prior } => prior.clone(),
            NodeKind::Internal { .. } => unreachable!(),
        };
        let got = propagation::belief_precision_form(&prior, &msg).unwrap();
        let want = oracle::exact_posterior(&net, &u).unwrap();
        let err = common::rel_err(&got, &want);
        assert!(
            err < 1e-8,
            "case {case}: singular-route posterior off by {err:.3e}"
        );
        worst_singular = worst_singular.max(err);
    }

    println!(
        "PASS: upstream message routes cross-validate — dual forms agree on 50 random \
         nodes ({worst_dual:.3e} < 1e-9) and the factored form handles singular \
         potentials exactly ({worst_singular:.3e} < 1e-8 vs exact conditioning)"
    );
}

#[test]
fn boundary_behavior_holds_across_suite() {
    for case in 0..100 {
        let net = suite_network(case);
        let prop = propagation::propagate(&net).unwrap();
        for id in net.node_ids() {
            if let Some(z) = net.evidence(id) {
                // An observed node's belief is its value, with zero
                // covariance, exactly.
                let b = prop.belief(id).unwrap();
                assert!(b.is_point(), "case {case}: observed {id} not a point mass");
                assert_eq!(b.mean(), z, "case {case}: observed {id} value drifted");
                continue;
            }
            let node = net.node(id).unwrap();
            let pi = prop.node_pi(id).unwrap();
            if let NodeKind::Root { prior } = &node.kind {
                assert_eq!(pi, prior, "case {case}: root {id} π is not its prior");
            }
            if net.children_of(id).is_empty() {
                // λ of an unobserved leaf is the unit potential, so the
                // belief is exactly π.
                assert_eq!(
                    prop.belief(id).unwrap(),
                    pi,
                    "case {case}: leaf {id} belief differs from π"
                );
            }
        }
        // A child with no observed descendant sends the unit potential up.
        for link in net.links() {
            let desc = common::descendants(&net, &link.to);
            if desc.iter().any(|d| net.has_evidence(d)) {
                continue;
            }
            let lam = prop.lambda_message(&link.to, &link.from).unwrap();
            assert!(
                lam.is_unit(),
                "case {case}: {} -> {} message should be unit",
                link.to,
                link.from
            );
        }
        // The same holds for a node's own evidence summary.
        for id in net.node_ids() {
            if !net.has_evidence(id)
                && common::descendants(&net, id)
                    .iter()
                    .all(|d| !net.has_evidence(d))
            {
                assert!(
                    matches!(prop.node_lambda(id), Some(NodeLambda::Potential(p)) if p.is_unit()),
                    "case {case}: λ at {id} should be unit"
                );
            }
        }
    }
    println!(
        "PASS: boundary behavior holds across the 100-network suite — unit potentials \
         without downstream evidence, root π = prior, leaf belief = π, observed \
         beliefs pinned exactly"
    );
}

#[test]
fn collect_root_choice_is_invariant() {
    let mut worst = 0.0_f64;
    for case in 0..20 {
        let net =
            common::with_random_evidence(&common::random_polytree(21_000 + case), 23_000 + case);
        let base = propagation::propagate(&net).unwrap();
        for root in net.node_ids() {
            let alt = propagation::propagate_with_root(&net, root).unwrap();
            for id in net.node_ids() {
                let diff = common::max_abs_diff(base.belief(id).unwrap(), alt.belief(id).unwrap());
                assert!(
                    diff < 1e-10,
                    "case {case}, root {root}, node {id}: beliefs differ by {diff:.3e}"
                );
                worst = worst.max(diff);
            }
        }
    }
    println!(
        "PASS: beliefs are invariant to the collect root on 20 random trees, every \
         root tried (max difference {worst:.3e} < 1e-10)"
    );
}

#[test]
fn long_filter_run_stays_consistent() {
    let start = Instant::now();
    let model = SystemModel::new(
        dmatrix![1.0, 0.1; 0.0, 1.0],
        None,
        dmatrix![0.05, 0.0; 0.0, 0.05],
        vec![Sensor::new(dmatrix![1.0, 0.0], dmatrix![0.5]).unwrap()],
    )
    .unwrap();
    let n_x = model.state_dim() as f64;
    let seq = ModelSequence::Constant(model);
    let init = Gaussian::new(dvector![0.0, 0.0], dmatrix![1.0, 0.0; 0.0, 1.0]).unwrap();
    let sim = kalman::simulate(&seq, &init, 1_000, &[], 2_024).unwrap();
    let states =
        kalman::run_filter(&seq, &init, &sim.to_steps(&[]), UpdateMode::Decentralized).unwrap();
    let mut total = 0.0;
    for (s, t) in states.iter().zip(&sim.truths) {
        total += kalman::nees(t, &s.estimate).unwrap();
    }
    let avg = total / states.len() as f64;
    assert!(
        avg >= 0.7 * n_x && avg <= 1.4 * n_x,
        "time-averaged consistency statistic {avg:.3} outside [{:.1}, {:.1}]",
        0.7 * n_x,
        1.4 * n_x
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "run took {elapsed:?}");
    println!(
        "PASS: 1000-step filtered simulation is chi-square consistent \
         (time-averaged statistic {avg:.3} in [{:.1}, {:.1}], {elapsed:.2?} < 5s)",
        0.7 * n_x,
        1.4 * n_x
    );
}
