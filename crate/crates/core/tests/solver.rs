use std::f64::consts::PI;

use crowdmap::graph::{
    optimize, prune_edges, ImuConvention, ImuInfo, LinearSolver, NodeId, PoseGraph, PruneStatistic, RfEdge,
    RobustKernel, SolverConfig, Termination,
};
use crowdmap::{wrap_angle, Error, Pose2D};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dead-reckoned chain plus matching odometry measurements.
fn chain(conv: ImuConvention, n: usize, seed: u64) -> (PoseGraph, Vec<Pose2D>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut truth = vec![Pose2D::new(1.0, -2.0, 0.4)];
    for _ in 1..n {
        let last = *truth.last().unwrap();
        truth.push(last.compose(
            rng.gen_range(0.3..1.0),
            rng.gen_range(-0.2..0.2),
            rng.gen_range(-0.3..0.3),
        ));
    }
    let mut g = PoseGraph::new(conv);
    for p in &truth {
        g.add_node(*p);
    }
    for i in 0..n - 1 {
        let z = conv.predict(&truth[i], &truth[i + 1]);
        g.add_imu_edge(NodeId(i), NodeId(i + 1), z, ImuInfo::default())
            .unwrap();
    }
    g.anchor(NodeId(0)).unwrap();
    (g, truth)
}

#[test]
fn chain_at_optimum_takes_no_steps() {
    let (mut g, truth) = chain(ImuConvention::AsPrinted, 50, 1);
    let report = optimize(&mut g, &SolverConfig::default()).unwrap();
    assert_eq!(report.termination, Termination::AlreadyOptimal);
    assert_eq!(report.accepted_steps, 0);
    assert!(report.final_cost < 1e-20);
    assert_eq!(g.nodes, truth);
}

#[test]
fn perturbed_chain_recovers_dead_reckoning() {
    for conv in [ImuConvention::AsPrinted, ImuConvention::Transposed] {
        let (mut g, truth) = chain(conv, 60, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for p in g.nodes.iter_mut().skip(1) {
            *p = Pose2D::new(
                p.x + rng.gen_range(-0.5..0.5),
                p.y + rng.gen_range(-0.5..0.5),
                p.theta + rng.gen_range(-0.2..0.2),
            );
        }
        optimize(&mut g, &SolverConfig::default()).unwrap();
        for (p, t) in g.nodes.iter().zip(&truth) {
            assert!((p.x - t.x).abs() <= 1e-9, "{conv:?}: x {} vs {}", p.x, t.x);
            assert!((p.y - t.y).abs() <= 1e-9);
            assert!(wrap_angle(p.theta - t.theta).abs() <= 1e-9);
        }
    }
}

fn total_cost(nodes: &[Pose2D], g: &PoseGraph) -> f64 {
    let mut probe = g.clone();
    probe.nodes = nodes.to_vec();
    let imu: f64 = probe
        .imu_edges
        .iter()
        .map(|e| {
            let (r, info) = probe.imu_residual(e);
            (r.transpose() * info * r)[0]
        })
        .sum();
    let rf: f64 = probe
        .rf_edges
        .iter()
        .map(|e| {
            let (r, info) = probe.rf_residual(e);
            info * r * r
        })
        .sum();
    imu + rf
}

/// Three poses, odometry 0→1→2 and a conflicting radio range 0–2.
fn triangle(anchor_two: bool) -> PoseGraph {
    let mut g = PoseGraph::new(ImuConvention::AsPrinted);
    let p0 = Pose2D::new(0.0, 0.0, 0.0);
    let p1 = Pose2D::new(-1.0, 0.0, 0.0);
    let p2 = Pose2D::new(-2.0, 0.5, 0.3);
    for p in [p0, p1, p2] {
        g.add_node(p);
    }
    let conv = g.convention;
    g.add_imu_edge(
        NodeId(0),
        NodeId(1),
        conv.predict(&p0, &p1),
        ImuInfo { a: 5.0, b: 3.0 },
    )
    .unwrap();
    g.add_imu_edge(
        NodeId(1),
        NodeId(2),
        conv.predict(&p1, &p2),
        ImuInfo { a: 5.0, b: 3.0 },
    )
    .unwrap();
    // the odometry puts node 2 about 2.06 m from node 0; the range wants 3 m
    g.add_rf_edge(RfEdge {
        from: NodeId(0),
        to: NodeId(2),
        mu_d: 3.0,
        info_scalar: 2.0,
        similarity: 0.5,
    })
    .unwrap();
    g.anchor(NodeId(0)).unwrap();
    if anchor_two {
        g.anchor(NodeId(1)).unwrap();
    }
    g
}

fn trivial_kernel() -> SolverConfig {
    SolverConfig {
        robust_kernel: RobustKernel::Trivial,
        ..Default::default()
    }
}

#[test]
fn three_node_minimizer_matches_dense_grid() {
    let mut g = triangle(true);
    let start = g.nodes.clone();
    optimize(&mut g, &trivial_kernel()).unwrap();
    let solved = g.nodes[2];

    // dense grid over the single free pose, then successively finer local grids
    let mut best = (f64::INFINITY, start[2]);
    let steps = 120;
    for ix in 0..=steps {
        for iy in 0..=steps {
            for it in 0..=steps {
                let p = Pose2D::new(
                    -4.0 + 4.0 * ix as f64 / steps as f64,
                    -2.0 + 4.0 * iy as f64 / steps as f64,
                    -PI + 2.0 * PI * it as f64 / steps as f64,
                );
                let mut nodes = start.clone();
                nodes[2] = p;
                let c = total_cost(&nodes, &g);
                if c < best.0 {
                    best = (c, p);
                }
            }
        }
    }
    let mut span = [
        4.0 / steps as f64,
        4.0 / steps as f64,
        2.0 * PI / steps as f64,
    ];
    for _ in 0..30 {
        let centre = best.1;
        for ix in -10..=10 {
            for iy in -10..=10 {
                for it in -10..=10 {
                    let p = Pose2D::new(
                        centre.x + span[0] * ix as f64 / 10.0,
                        centre.y + span[1] * iy as f64 / 10.0,
                        centre.theta + span[2] * it as f64 / 10.0,
                    );
                    let mut nodes = start.clone();
                    nodes[2] = p;
                    let c = total_cost(&nodes, &g);
                    if c < best.0 {
                        best = (c, p);
                    }
                }
            }
        }
        span.iter_mut().for_each(|s| *s *= 0.5);
    }
    let grid = best.1;
    assert!(
        (solved.x - grid.x).abs() < 1e-3 && (solved.y - grid.y).abs() < 1e-3,
        "solver {solved:?} grid {grid:?}"
    );
}

#[test]
fn three_node_minimizer_matches_pattern_search_with_one_anchor() {
    let mut g = triangle(false);
    let start = g.nodes.clone();
    optimize(&mut g, &trivial_kernel()).unwrap();

    // coarse-to-fine compass search over the six free coordinates
    let mut x: Vec<f64> = start[1..]
        .iter()
        .flat_map(|p| [p.x, p.y, p.theta])
        .collect();
    let eval = |x: &[f64]| {
        let mut nodes = start.clone();
        nodes[1] = Pose2D {
            x: x[0],
            y: x[1],
            theta: x[2],
        };
        nodes[2] = Pose2D {
            x: x[3],
            y: x[4],
            theta: x[5],
        };
        total_cost(&nodes, &g)
    };
    let mut best = eval(&x);
    let mut h = 0.5;
    while h > 1e-10 {
        let mut improved = false;
        for k in 0..6 {
            for sign in [-1.0, 1.0] {
                for mult in [1.0, 2.0, 4.0] {
                    let mut y = x.clone();
                    y[k] += sign * mult * h;
                    let c = eval(&y);
                    if c < best {
                        best = c;
                        x = y;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            h *= 0.5;
        }
    }
    assert!((g.nodes[1].x - x[0]).abs() < 1e-3 && (g.nodes[1].y - x[1]).abs() < 1e-3);
    assert!((g.nodes[2].x - x[3]).abs() < 1e-3 && (g.nodes[2].y - x[4]).abs() < 1e-3);
}

/// Several noisy chains tied together by radio ranges taken from the true layout.
fn random_graph(seed: u64, conv: ImuConvention) -> (PoseGraph, Vec<Pose2D>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_traj = rng.gen_range(2..5);
    let len = rng.gen_range(8..25);
    let mut truth = Vec::new();
    let mut g = PoseGraph::new(conv);
    for t in 0..n_traj {
        let mut p = Pose2D::new(
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-PI..PI),
        );
        let base = truth.len();
        for i in 0..len {
            truth.push(p);
            g.add_node(Pose2D::new(
                p.x + rng.gen_range(-1.0..1.0),
                p.y + rng.gen_range(-1.0..1.0),
                p.theta + rng.gen_range(-0.3..0.3),
            ));
            if i > 0 {
                let z = conv.predict(&truth[base + i - 1], &truth[base + i]);
                let noisy = z + Vector3::new(
                    rng.gen_range(-0.05..0.05),
                    rng.gen_range(-0.05..0.05),
                    rng.gen_range(-0.02..0.02),
                );
                g.add_imu_edge(
                    NodeId(base + i - 1),
                    NodeId(base + i),
                    noisy,
                    ImuInfo::default(),
                )
                .unwrap();
            }
            p = p.compose(0.7, 0.0, rng.gen_range(-0.4..0.4));
        }
        if t == 0 {
            g.anchor(NodeId(base)).unwrap();
            g.nodes[base] = truth[base];
        }
    }
    for _ in 0..(n_traj * len) {
        let a = rng.gen_range(0..truth.len());
        let b = rng.gen_range(0..truth.len());
        if a == b {
            continue;
        }
        let d = crowdmap::euclidean_distance(&truth[a], &truth[b]);
        g.add_rf_edge(RfEdge {
            from: NodeId(a),
            to: NodeId(b),
            mu_d: (d + rng.gen_range(-0.3..0.3)).max(0.1),
            info_scalar: rng.gen_range(0.5..4.0),
            similarity: 0.5,
        })
        .unwrap();
    }
    (g, truth)
}

#[test]
fn cost_never_increases_across_accepted_steps() {
    for seed in 0..20 {
        let (mut g, _) = random_graph(seed, ImuConvention::AsPrinted);
        let report = optimize(&mut g, &SolverConfig::default()).unwrap();
        assert!(report.accepted_steps > 0, "seed {seed}");
        for w in report.cost_history.windows(2) {
            assert!(
                w[1] <= w[0],
                "seed {seed}: cost went up {} -> {}",
                w[0],
                w[1]
            );
        }
        assert_eq!(*report.cost_history.last().unwrap(), report.final_cost);
        assert!(report.final_cost < report.initial_cost);
    }
}

/// Applies a rigid motion to every pose the way each convention keeps odometry intact.
fn moved(conv: ImuConvention, poses: &[Pose2D], angle: f64, shift: [f64; 2]) -> Vec<Pose2D> {
    poses
        .iter()
        .map(|p| conv.transform(p, angle, shift))
        .collect()
}

#[test]
fn solution_follows_a_rigid_motion_of_the_anchors() {
    for conv in [ImuConvention::AsPrinted, ImuConvention::Transposed] {
        let (g0, _) = random_graph(99, conv);
        let cfg = SolverConfig {
            cost_tolerance: 1e-14,
            ..Default::default()
        };
        let mut a = g0.clone();
        optimize(&mut a, &cfg).unwrap();

        let (angle, shift) = (1.1, [12.0, -7.5]);
        let mut b = g0.clone();
        b.nodes = moved(conv, &g0.nodes, angle, shift);
        optimize(&mut b, &cfg).unwrap();

        let expected = moved(conv, &a.nodes, angle, shift);
        for (p, q) in b.nodes.iter().zip(&expected) {
            assert!(
                (p.x - q.x).abs() < 1e-6 && (p.y - q.y).abs() < 1e-6,
                "{conv:?}: {p:?} vs {q:?}"
            );
            assert!(wrap_angle(p.theta - q.theta).abs() < 1e-6);
        }
    }
}

#[test]
fn optimizing_odometry_only_keeps_dead_reckoning() {
    let (mut g, truth) = chain(ImuConvention::Transposed, 30, 8);
    g.nodes
        .iter_mut()
        .skip(1)
        .for_each(|p| *p = Pose2D::origin());
    optimize(&mut g, &SolverConfig::default()).unwrap();
    for (p, t) in g.nodes.iter().zip(&truth) {
        assert!((p.x - t.x).abs() < 1e-9 && (p.y - t.y).abs() < 1e-9);
    }
}

#[test]
fn pruning_drops_a_grossly_wrong_range() {
    let (mut g, truth) = random_graph(5, ImuConvention::AsPrinted);
    let a = 3;
    let b = truth.len() - 2;
    let d = crowdmap::euclidean_distance(&truth[a], &truth[b]);
    g.add_rf_edge(RfEdge {
        from: NodeId(a),
        to: NodeId(b),
        mu_d: d + 50.0,
        info_scalar: 1.0,
        similarity: 0.9,
    })
    .unwrap();
    let bad = g.rf_edges.len() - 1;
    let cfg = SolverConfig::default();
    optimize(&mut g, &cfg).unwrap();
    let chi2 = g.rf_chi2().unwrap().to_vec();
    let worst = (0..chi2.len())
        .max_by(|&i, &j| chi2[i].total_cmp(&chi2[j]))
        .unwrap();
    assert_eq!(worst, bad);
    let n = g.rf_edges.len();
    let removed = prune_edges(&mut g, cfg.prune_chi2);
    assert!(removed >= 1);
    assert!(!g
        .rf_edges
        .iter()
        .any(|e| e.from == NodeId(a) && e.to == NodeId(b)));
    assert_eq!(g.rf_edges.len(), n - removed);
    optimize(&mut g, &cfg).unwrap();
}

#[test]
fn prune_threshold_extremes() {
    let (mut g, _) = random_graph(6, ImuConvention::AsPrinted);
    optimize(&mut g, &SolverConfig::default()).unwrap();
    assert_eq!(prune_edges(&mut g.clone(), f64::INFINITY), 0);
    let n = g.rf_edges.len();
    let imu = g.imu_edges.len();
    assert_eq!(prune_edges(&mut g, 0.0), n);
    assert!(g.rf_edges.is_empty());
    assert_eq!(g.imu_edges.len(), imu);
}

#[test]
fn unanchored_components_are_reported_or_anchored() {
    let (mut g, _) = chain(ImuConvention::AsPrinted, 5, 4);
    let extra = g.add_node(Pose2D::new(3.0, 3.0, 0.0));
    let extra2 = g.add_node(Pose2D::new(4.0, 3.0, 0.0));
    g.add_imu_edge(
        extra,
        extra2,
        Vector3::new(1.0, 0.0, 0.0),
        ImuInfo::default(),
    )
    .unwrap();
    let strict = SolverConfig {
        auto_anchor: false,
        ..Default::default()
    };
    assert!(matches!(
        optimize(&mut g.clone(), &strict),
        Err(Error::Underconstrained(_))
    ));
    let report = optimize(&mut g, &SolverConfig::default()).unwrap();
    assert_eq!(report.auto_anchored, vec![extra]);
}

#[test]
fn non_finite_state_is_reported() {
    let (mut g, _) = chain(ImuConvention::AsPrinted, 4, 4);
    g.nodes[2].x = f64::NAN;
    match optimize(&mut g, &SolverConfig::default()) {
        Err(Error::NonFiniteCost(msg)) => assert!(msg.contains("edge")),
        other => panic!("expected a non-finite cost error, got {other:?}"),
    }
}

#[test]
fn huber_weight_is_the_derivative_of_rho() {
    let k = RobustKernel::Huber(1.3);
    for s in [0.1, 1.0, 1.69, 2.0, 50.0] {
        let h = 1e-6;
        let fd = (k.rho(s + h) - k.rho(s - h)) / (2.0 * h);
        assert!((fd - k.weight(s)).abs() < 1e-6);
    }
    assert_eq!(RobustKernel::Trivial.rho(7.0), 7.0);
}

#[test]
fn conjugate_gradients_match_direct_factorization() {
    for seed in 0..10 {
        let (g, _) = random_graph(100 + seed, ImuConvention::AsPrinted);
        let mut direct = g.clone();
        let mut iterative = g;
        let cfg = |linear_solver| SolverConfig {
            linear_solver,
            pcg_tolerance: 1e-12,
            ..SolverConfig::default()
        };
        let a = optimize(&mut direct, &cfg(LinearSolver::Cholesky)).unwrap();
        let b = optimize(&mut iterative, &cfg(LinearSolver::Pcg)).unwrap();
        assert!(
            (a.final_cost - b.final_cost).abs() <= 1e-6 * a.final_cost.max(1.0),
            "seed {seed}"
        );
        for (p, q) in direct.nodes.iter().zip(&iterative.nodes) {
            assert!(
                (p.x - q.x).abs() < 1e-4 && (p.y - q.y).abs() < 1e-4,
                "seed {seed}"
            );
            assert!(wrap_angle(p.theta - q.theta).abs() < 1e-5, "seed {seed}");
        }
    }
}

#[test]
fn prune_statistic_selects_raw_or_robustified_chi2() {
    // two anchored poses 4 m apart, range 7 m with unit information: raw χ² 9, Huber 5
    let mut g = PoseGraph::new(ImuConvention::AsPrinted);
    g.add_node(Pose2D::new(0.0, 0.0, 0.0));
    g.add_node(Pose2D::new(4.0, 0.0, 0.0));
    g.add_rf_edge(RfEdge { from: NodeId(0), to: NodeId(1), mu_d: 7.0, info_scalar: 1.0, similarity: 0.5 })
        .unwrap();
    g.anchor(NodeId(0)).unwrap();
    g.anchor(NodeId(1)).unwrap();
    let raw = optimize(&mut g.clone(), &SolverConfig::default()).unwrap();
    assert!((raw.rf_chi2[0] - 9.0).abs() < 1e-12);
    let cfg = SolverConfig { prune_statistic: PruneStatistic::Robustified, ..SolverConfig::default() };
    let mut robust = g.clone();
    let r = optimize(&mut robust, &cfg).unwrap();
    assert!((r.rf_chi2[0] - 5.0).abs() < 1e-12);
    assert_eq!(prune_edges(&mut robust, 5.99), 0);
    let mut plain = g.clone();
    optimize(&mut plain, &SolverConfig::default()).unwrap();
    assert_eq!(prune_edges(&mut plain, 5.99), 1);
}
