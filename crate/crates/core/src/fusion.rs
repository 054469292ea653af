//! Per-floor fusion of dead-reckoned trajectories into one common frame.
//!
//! Each floor is solved independently: odometry edges between consecutive steps, radio
//! range edges from loop closures, a greedy rigid registration of whole trajectories
//! as the starting point, then optimize → prune → optimize.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geomodel::GeoModel;
use crate::graph::{
    optimize, prune_edges, ImuConvention, ImuInfo, NodeId, OptimizeReport, PoseGraph, SolverConfig,
};
use crate::loopclosure::{
    closures_to_edges, Candidate, ClosureCandidates, ClosureConfig, NodeIndex,
};
use crate::model::{Pose2D, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfig {
    pub enabled: bool,
    /// Translation votes closer than this agree (m).
    pub inlier_radius: f64,
    /// Strongest closures used per join.
    pub max_pairs: usize,
    pub coarse_step_deg: f64,
    pub fine_step_deg: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            inlier_radius: 5.0,
            max_pairs: 200,
            coarse_step_deg: 5.0,
            fine_step_deg: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub closure: ClosureConfig,
    pub solver: SolverConfig,
    pub convention: ImuConvention,
    pub imu_info: ImuInfo,
    pub registration: RegistrationConfig,
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        self.closure.validate()?;
        self.solver.validate()?;
        let r = &self.registration;
        if !(r.inlier_radius > 0.0
            && r.coarse_step_deg > 0.0
            && r.fine_step_deg > 0.0
            && r.max_pairs > 0)
        {
            return Err(Error::InvalidInput(
                "registration parameters must be positive".into(),
            ));
        }
        if !(self.imu_info.a > 0.0 && self.imu_info.b > 0.0) {
            return Err(Error::InvalidInput(
                "odometry information must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Rigid placement of one trajectory's local frame in the common frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub angle: f64,
    pub shift: [f64; 2],
    /// Inlier closures behind the placement; 0 for component seeds.
    pub support: usize,
}

impl Placement {
    pub const IDENTITY: Placement = Placement {
        angle: 0.0,
        shift: [0.0, 0.0],
        support: 0,
    };

    fn apply_xy(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.angle.sin_cos();
        [
            c * p[0] - s * p[1] + self.shift[0],
            s * p[0] + c * p[1] + self.shift[1],
        ]
    }
}

/// Registration result: a placement per trajectory and the seed trajectory of each
/// connected group.
#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    pub placements: Vec<Placement>,
    pub seeds: Vec<usize>,
}

fn translation_consensus(
    pairs: &[([f64; 2], [f64; 2])],
    angle: f64,
    radius: f64,
) -> (usize, f64, [f64; 2]) {
    let (s, c) = angle.sin_cos();
    let votes: Vec<[f64; 2]> = pairs
        .iter()
        .map(|(p, q)| [p[0] - (c * q[0] - s * q[1]), p[1] - (s * q[0] + c * q[1])])
        .collect();
    let r2 = radius * radius;
    let mut best = (0usize, f64::INFINITY, [0.0, 0.0]);
    for v in &votes {
        let (mut count, mut spread, mut sx, mut sy) = (0usize, 0.0, 0.0, 0.0);
        for w in &votes {
            let d2 = (v[0] - w[0]).powi(2) + (v[1] - w[1]).powi(2);
            if d2 <= r2 {
                count += 1;
                spread += d2;
                sx += w[0];
                sy += w[1];
            }
        }
        if count > best.0 || (count == best.0 && spread < best.1) {
            best = (count, spread, [sx / count as f64, sy / count as f64]);
        }
    }
    best
}

/// Rotation and translation taking local points `q` onto common-frame points `p`,
/// chosen by translation voting over a heading grid.
pub fn estimate_placement(pairs: &[([f64; 2], [f64; 2])], cfg: &RegistrationConfig) -> Placement {
    let mut best = (0usize, f64::INFINITY, 0.0, [0.0, 0.0]);
    let consider = |angle: f64, best: &mut (usize, f64, f64, [f64; 2])| {
        let (count, spread, shift) = translation_consensus(pairs, angle, cfg.inlier_radius);
        if count > best.0 || (count == best.0 && spread < best.1) {
            *best = (count, spread, angle, shift);
        }
    };
    let coarse = cfg.coarse_step_deg.to_radians();
    let n = (2.0 * PI / coarse).ceil() as usize;
    for k in 0..n {
        consider(-PI + k as f64 * coarse, &mut best);
    }
    let fine = cfg.fine_step_deg.to_radians();
    let center = best.2;
    let m = (coarse / fine).ceil() as i64;
    for k in -m..=m {
        consider(center + k as f64 * fine, &mut best);
    }
    Placement {
        angle: crate::wrap_angle(best.2),
        shift: best.3,
        support: best.0,
    }
}

/// Greedy registration: the longest trajectory is fixed; repeatedly the unplaced
/// trajectory with the most closures to already placed ones is attached. Trajectories
/// with no path of closures to a placed one start a new group.
pub fn register(
    trajectories: &[Trajectory],
    index: &NodeIndex,
    closures: &[Candidate],
    cfg: &RegistrationConfig,
) -> Registration {
    let n = trajectories.len();
    let mut placements: Vec<Option<Placement>> = vec![None; n];
    let mut seeds = Vec::new();
    let local_xy = |t: usize, k: usize| trajectories[t].steps()[k].pose.xy();
    let located: Vec<((usize, usize), (usize, usize), f64)> = closures
        .iter()
        .map(|c| (index.locate(c.from), index.locate(c.to), c.similarity))
        .filter(|(a, b, _)| a.0 != b.0)
        .collect();

    while placements.iter().any(Option::is_none) {
        let seed = (0..n)
            .filter(|&t| placements[t].is_none())
            .max_by_key(|&t| (trajectories[t].len(), std::cmp::Reverse(t)))
            .unwrap();
        placements[seed] = Some(Placement::IDENTITY);
        seeds.push(seed);
        loop {
            let mut links = vec![0usize; n];
            for (a, b, _) in &located {
                match (placements[a.0].is_some(), placements[b.0].is_some()) {
                    (true, false) => links[b.0] += 1,
                    (false, true) => links[a.0] += 1,
                    _ => {}
                }
            }
            let Some(next) = (0..n)
                .filter(|&t| links[t] > 0)
                .max_by_key(|&t| (links[t], std::cmp::Reverse(t)))
            else {
                break;
            };
            let mut pairs: Vec<(f64, [f64; 2], [f64; 2])> = located
                .iter()
                .filter_map(|&(a, b, g)| {
                    let (placed, free) = if a.0 == next {
                        (b, a)
                    } else if b.0 == next {
                        (a, b)
                    } else {
                        return None;
                    };
                    let pl = placements[placed.0]?;
                    Some((
                        g,
                        pl.apply_xy(local_xy(placed.0, placed.1)),
                        local_xy(free.0, free.1),
                    ))
                })
                .collect();
            pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
            pairs.truncate(cfg.max_pairs);
            let pairs: Vec<([f64; 2], [f64; 2])> =
                pairs.into_iter().map(|(_, p, q)| (p, q)).collect();
            placements[next] = Some(estimate_placement(&pairs, cfg));
        }
    }
    Registration {
        placements: placements.into_iter().map(Option::unwrap).collect(),
        seeds,
    }
}

/// Fusion outcome for one floor.
#[derive(Debug, Clone)]
pub struct FloorFusion {
    pub floor: i32,
    /// Indices into the caller's trajectory list.
    pub members: Vec<usize>,
    pub index: NodeIndex,
    pub graph: PoseGraph,
    pub registration: Registration,
    pub closures: usize,
    pub pruned: usize,
    pub reports: Vec<OptimizeReport>,
}

#[derive(Debug, Clone)]
pub struct FusionResult {
    /// Input trajectories with poses in their floor's common frame, in input order.
    pub trajectories: Vec<Trajectory>,
    pub floors: Vec<FloorFusion>,
}

impl FusionResult {
    pub fn closures(&self) -> usize {
        self.floors.iter().map(|f| f.closures).sum()
    }

    pub fn pruned(&self) -> usize {
        self.floors.iter().map(|f| f.pruned).sum()
    }
}

/// Odometry + radio graph over `trajectories` (all on one floor), initialized at the
/// registered placements and anchored at each group's seed.
pub fn build_graph(
    trajectories: &[Trajectory],
    index: &NodeIndex,
    closures: &[Candidate],
    model: &GeoModel,
    registration: &Registration,
    cfg: &FusionConfig,
) -> Result<PoseGraph> {
    let mut graph = PoseGraph::new(cfg.convention);
    for (t, traj) in trajectories.iter().enumerate() {
        let pl = registration.placements[t];
        for s in traj.steps() {
            graph.add_node(cfg.convention.transform(&s.pose, pl.angle, pl.shift));
        }
        for k in 1..traj.len() {
            let z = cfg
                .convention
                .predict(&traj.steps()[k - 1].pose, &traj.steps()[k].pose);
            graph.add_imu_edge(index.node(t, k - 1), index.node(t, k), z, cfg.imu_info)?;
        }
    }
    for e in closures_to_edges(closures, model)? {
        graph.add_rf_edge(e)?;
    }
    for &s in &registration.seeds {
        graph.anchor(index.node(s, 0))?;
    }
    Ok(graph)
}

/// optimize → prune → optimize on a prepared graph. Returns the reports and the number
/// of radio edges pruned.
pub fn solve(graph: &mut PoseGraph, solver: &SolverConfig) -> Result<(Vec<OptimizeReport>, usize)> {
    let first = optimize(graph, solver)?;
    let pruned = prune_edges(graph, solver.prune_chi2);
    let second = optimize(graph, solver)?;
    Ok((vec![first, second], pruned))
}

/// Fuses one floor's trajectories given already selected closures.
pub fn fuse_floor(
    trajectories: &[Trajectory],
    closures: &[Candidate],
    model: &GeoModel,
    cfg: &FusionConfig,
) -> Result<(Vec<Trajectory>, FloorFusion)> {
    let floor = trajectories.first().map_or(0, |t| t.floor);
    let index = NodeIndex::new(trajectories);
    let registration = if cfg.registration.enabled {
        register(trajectories, &index, closures, &cfg.registration)
    } else {
        Registration {
            placements: vec![Placement::IDENTITY; trajectories.len()],
            seeds: trajectories
                .iter()
                .enumerate()
                .max_by_key(|(i, t)| (t.len(), std::cmp::Reverse(*i)))
                .map(|(i, _)| vec![i])
                .unwrap_or_default(),
        }
    };
    if registration.seeds.len() > 1 {
        warn!(
            "floor {floor}: trajectories form {} disconnected groups (seeds {:?}); each keeps its own frame",
            registration.seeds.len(),
            registration.seeds.iter().map(|&s| &trajectories[s].id).collect::<Vec<_>>()
        );
    }
    let mut graph = build_graph(trajectories, &index, closures, model, &registration, cfg)?;
    let (reports, pruned) = solve(&mut graph, &cfg.solver)?;
    info!(
        "floor {floor}: {} nodes, {} closures, {pruned} pruned, cost {:.3e} -> {:.3e}",
        graph.len(),
        closures.len(),
        reports[0].initial_cost,
        reports[1].final_cost
    );
    let fused = trajectories
        .iter()
        .enumerate()
        .map(|(t, traj)| traj.with_poses(&graph.nodes[index.range(t)]))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        fused,
        FloorFusion {
            floor,
            members: Vec::new(),
            index,
            graph,
            registration,
            closures: closures.len(),
            pruned,
            reports,
        },
    ))
}

fn by_floor(trajectories: &[Trajectory]) -> BTreeMap<i32, Vec<usize>> {
    let mut floors: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (i, t) in trajectories.iter().enumerate() {
        floors.entry(t.floor).or_default().push(i);
    }
    floors
}

/// Radio closure candidates of every floor, scored once down to `min_similarity`.
pub struct FloorCandidates {
    floors: Vec<(i32, Vec<usize>, Vec<Trajectory>, ClosureCandidates)>,
    total: usize,
}

impl FloorCandidates {
    pub fn score(
        trajectories: &[Trajectory],
        model: &GeoModel,
        closure: &ClosureConfig,
        min_similarity: f64,
    ) -> Result<Self> {
        let simcfg = model.similarity_config();
        let floors = by_floor(trajectories)
            .into_iter()
            .map(|(floor, members)| {
                let subset: Vec<Trajectory> =
                    members.iter().map(|&i| trajectories[i].clone()).collect();
                let cands = ClosureCandidates::score(
                    &subset,
                    &simcfg,
                    min_similarity,
                    closure.min_intra_step_gap,
                    closure.min_jaccard,
                )?;
                Ok((floor, members, subset, cands))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            floors,
            total: trajectories.len(),
        })
    }

    /// Selects closures at `threshold` and fuses every floor.
    pub fn fuse(
        &self,
        model: &GeoModel,
        threshold: f64,
        cfg: &FusionConfig,
    ) -> Result<FusionResult> {
        let mut out: Vec<Option<Trajectory>> = vec![None; self.total];
        let mut floors = Vec::new();
        for (floor, members, subset, cands) in &self.floors {
            let selected = cands.select(threshold, cfg.closure.max_edges_per_node);
            if selected.is_empty() {
                warn!("floor {floor}: no radio closures at threshold {threshold}; graph will not fuse");
            }
            let (fused, mut report) = fuse_floor(subset, &selected, model, cfg)?;
            report.members = members.clone();
            for (&i, t) in members.iter().zip(fused) {
                out[i] = Some(t);
            }
            floors.push(report);
        }
        Ok(FusionResult {
            trajectories: out
                .into_iter()
                .map(|t| t.expect("every trajectory has a floor"))
                .collect(),
            floors,
        })
    }
}

/// Full fusion at the configured closure threshold.
pub fn fuse(
    trajectories: &[Trajectory],
    model: &GeoModel,
    cfg: &FusionConfig,
) -> Result<FusionResult> {
    cfg.validate()?;
    if trajectories.is_empty() {
        return Err(Error::InsufficientData("no trajectories to fuse".into()));
    }
    FloorCandidates::score(trajectories, model, &cfg.closure, cfg.closure.threshold)?.fuse(
        model,
        cfg.closure.threshold,
        cfg,
    )
}

/// One fusion per threshold, sharing a single scoring pass.
pub fn threshold_sweep(
    trajectories: &[Trajectory],
    model: &GeoModel,
    cfg: &FusionConfig,
    thresholds: &[f64],
) -> Result<Vec<(f64, FusionResult)>> {
    cfg.validate()?;
    let lowest = thresholds.iter().copied().fold(f64::INFINITY, f64::min);
    if !(lowest > 0.0 && lowest < 1.0) {
        return Err(Error::InvalidInput(
            "sweep thresholds must lie in (0, 1)".into(),
        ));
    }
    let cands = FloorCandidates::score(trajectories, model, &cfg.closure, lowest)?;
    thresholds
        .iter()
        .map(|&t| Ok((t, cands.fuse(model, t, cfg)?)))
        .collect()
}

/// The grid 0.05, 0.15, …, 0.95.
pub fn default_sweep_thresholds() -> Vec<f64> {
    (0..10).map(|k| 0.05 + 0.1 * k as f64).collect()
}

/// Positions of all nodes of `trajectories`, flattened in order.
pub fn positions(trajectories: &[Trajectory]) -> Vec<[f64; 2]> {
    trajectories
        .iter()
        .flat_map(|t| t.poses().map(Pose2D::xy))
        .collect()
}

/// Node of trajectory `traj`, step `step` inside a floor's graph.
pub fn node_of(floor: &FloorFusion, traj: usize, step: usize) -> Option<NodeId> {
    let local = floor.members.iter().position(|&m| m == traj)?;
    Some(floor.index.node(local, step))
}
