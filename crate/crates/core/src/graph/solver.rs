//! Levenberg-Marquardt on the sparse normal equations of a [`PoseGraph`].

use std::collections::HashMap;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Col, Side};
use log::{debug, warn};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{rf_residual_jacobian, NodeId, PoseGraph};
use crate::error::{Error, Result};
use crate::model::{wrap_angle, Pose2D};

/// Robust loss applied to the whitened squared radio residual `s = info·r²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "delta")]
pub enum RobustKernel {
    Trivial,
    Huber(f64),
}

impl RobustKernel {
    pub fn rho(&self, s: f64) -> f64 {
        match *self {
            RobustKernel::Trivial => s,
            RobustKernel::Huber(delta) => {
                if s <= delta * delta {
                    s
                } else {
                    2.0 * delta * s.sqrt() - delta * delta
                }
            }
        }
    }

    /// dρ/ds, the iteratively-reweighted least squares weight.
    pub fn weight(&self, s: f64) -> f64 {
        match *self {
            RobustKernel::Trivial => 1.0,
            RobustKernel::Huber(delta) => {
                if s <= delta * delta {
                    1.0
                } else {
                    delta / s.sqrt()
                }
            }
        }
    }
}

/// How each damped normal-equation system is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearSolver {
    /// Cholesky up to [`AUTO_CHOLESKY_MAX_BLOCKS`] free poses, conjugate gradients above.
    #[default]
    Auto,
    /// Sparse Cholesky with a symbolic factorization reused across iterations.
    Cholesky,
    /// Conjugate gradients preconditioned by the block-tridiagonal part of the system,
    /// which is exact for odometry chains.
    Pcg,
}

/// Which radio χ² the pruning threshold is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneStatistic {
    /// Whitened squared residual `info·r²`.
    #[default]
    Raw,
    /// The same value passed through the robust kernel.
    Robustified,
}

pub const AUTO_CHOLESKY_MAX_BLOCKS: usize = 3000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub initial_lambda: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub cost_tolerance: f64,
    /// Stop when the step norm falls below this (scaled by the state norm).
    pub step_tolerance: f64,
    pub robust_kernel: RobustKernel,
    /// Anchor the lowest node of every component that has no anchor.
    pub auto_anchor: bool,
    /// Pruning threshold on the radio χ² selected by `prune_statistic`.
    pub prune_chi2: f64,
    pub prune_statistic: PruneStatistic,
    pub linear_solver: LinearSolver,
    /// Relative residual at which conjugate gradients stop.
    pub pcg_tolerance: f64,
    pub pcg_max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            initial_lambda: 1e-4,
            lambda_up: 10.0,
            lambda_down: 0.5,
            cost_tolerance: 1e-9,
            step_tolerance: 1e-12,
            robust_kernel: RobustKernel::Huber(1.0),
            auto_anchor: true,
            prune_chi2: 5.99,
            prune_statistic: PruneStatistic::Raw,
            linear_solver: LinearSolver::Auto,
            pcg_tolerance: 1e-8,
            pcg_max_iterations: 2000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidInput(format!("solver: {what}")));
        if !(self.initial_lambda > 0.0) {
            return bad("initial_lambda must be positive");
        }
        if !(self.lambda_up > 1.0) || !(self.lambda_down > 0.0 && self.lambda_down < 1.0) {
            return bad("lambda_up must exceed 1 and lambda_down lie in (0, 1)");
        }
        if !(self.cost_tolerance >= 0.0 && self.step_tolerance >= 0.0) {
            return bad("tolerances must be non-negative");
        }
        if let RobustKernel::Huber(d) = self.robust_kernel {
            if !(d > 0.0) {
                return bad("Huber delta must be positive");
            }
        }
        if self.prune_chi2.is_nan() || self.prune_chi2 < 0.0 {
            return bad("prune_chi2 must be non-negative");
        }
        if !(self.pcg_tolerance > 0.0) || self.pcg_max_iterations == 0 {
            return bad("conjugate-gradient tolerance and iteration limit must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Nothing to optimize or the gradient already vanishes.
    AlreadyOptimal,
    CostTolerance,
    StepTolerance,
    MaxIterations,
    /// Damping grew without finding a decrease.
    NoDecrease,
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizeReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Linear solves performed, accepted or not.
    pub iterations: usize,
    pub accepted_steps: usize,
    pub termination: Termination,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
    /// Radio χ² per edge at the final state, as selected by `prune_statistic`.
    pub rf_chi2: Vec<f64>,
    /// χ² per odometry edge at the final state.
    pub imu_chi2: Vec<f64>,
    pub auto_anchored: Vec<NodeId>,
}

/// Lower triangle of the 3×3-block normal matrix in compressed-column form, with a
/// fixed pattern so the symbolic factorization is computed once.
struct NormalEquations {
    dim: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
    rhs: Vec<f64>,
    offdiag: HashMap<(usize, usize), usize>,
}

impl NormalEquations {
    /// `pairs` are (row block, column block) with row > column.
    fn new(blocks: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut per_col: Vec<Vec<usize>> = vec![Vec::new(); blocks];
        for (i, j) in pairs {
            debug_assert!(i > j);
            per_col[j].push(i);
        }
        let mut offdiag = HashMap::new();
        for (j, rows) in per_col.iter_mut().enumerate() {
            rows.sort_unstable();
            rows.dedup();
            for (k, &i) in rows.iter().enumerate() {
                offdiag.insert((i, j), k);
            }
        }
        let dim = 3 * blocks;
        let mut col_ptr = Vec::with_capacity(dim + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for (j, rows) in per_col.iter().enumerate() {
            for b in 0..3 {
                row_idx.extend(3 * j + b..3 * j + 3);
                for &i in rows {
                    row_idx.extend(3 * i..3 * i + 3);
                }
                col_ptr.push(row_idx.len());
            }
        }
        let nnz = row_idx.len();
        Self {
            dim,
            col_ptr,
            row_idx,
            values: vec![0.0; nnz],
            rhs: vec![0.0; dim],
            offdiag,
        }
    }

    fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
        self.rhs.iter_mut().for_each(|v| *v = 0.0);
    }

    fn add_diag(&mut self, j: usize, m: &Matrix3<f64>) {
        for b in 0..3 {
            let base = self.col_ptr[3 * j + b];
            for a in b..3 {
                self.values[base + a - b] += m[(a, b)];
            }
        }
    }

    /// Adds block `m` at (row block `i`, column block `j`), i ≠ j, mirroring into the
    /// stored lower triangle.
    fn add_offdiag(&mut self, i: usize, j: usize, m: &Matrix3<f64>) {
        let (r, c, m) = if i > j {
            (i, j, *m)
        } else {
            (j, i, m.transpose())
        };
        let k = self.offdiag[&(r, c)];
        for b in 0..3 {
            let base = self.col_ptr[3 * c + b] + (3 - b) + 3 * k;
            for a in 0..3 {
                self.values[base + a] += m[(a, b)];
            }
        }
    }

    fn add_rhs(&mut self, j: usize, v: &Vector3<f64>) {
        for a in 0..3 {
            self.rhs[3 * j + a] += v[a];
        }
    }

    fn diag_positions(&self) -> Vec<usize> {
        (0..self.dim).map(|c| self.col_ptr[c]).collect()
    }

    fn symbolic(&self) -> SymbolicSparseColMatRef<'_, usize> {
        SymbolicSparseColMatRef::new_checked(self.dim, self.dim, &self.col_ptr, None, &self.row_idx)
    }
}

/// Block-tridiagonal LDLᵀ of a damped system, used as a preconditioner. Links whose
/// Schur complement is not positive definite are dropped.
struct ChainPreconditioner {
    /// `L_{v,v-1}` for every block (zero for the first and for cut links).
    lower: Vec<Matrix3<f64>>,
    pivots: Vec<Matrix3<f64>>,
}

impl ChainPreconditioner {
    fn new(ne: &NormalEquations, values: &[f64]) -> Self {
        let blocks = ne.dim / 3;
        let diag = |v: usize| {
            let mut m = Matrix3::zeros();
            for b in 0..3 {
                let base = ne.col_ptr[3 * v + b];
                for a in b..3 {
                    m[(a, b)] = values[base + a - b];
                    m[(b, a)] = values[base + a - b];
                }
            }
            m
        };
        let link = |v: usize| {
            let k = *ne.offdiag.get(&(v, v - 1))?;
            let mut m = Matrix3::zeros();
            for b in 0..3 {
                let base = ne.col_ptr[3 * (v - 1) + b] + (3 - b) + 3 * k;
                for a in 0..3 {
                    m[(a, b)] = values[base + a];
                }
            }
            Some(m)
        };
        let mut lower = vec![Matrix3::zeros(); blocks];
        let mut pivots: Vec<Matrix3<f64>> = Vec::with_capacity(blocks);
        for v in 0..blocks {
            let d = diag(v);
            let linked = (v > 0).then(|| link(v)).flatten().and_then(|b| {
                let l = b * pivots[v - 1];
                let s = d - l * b.transpose();
                nalgebra::Cholesky::new(s).map(|c| (l, c.inverse()))
            });
            match linked {
                Some((l, inv)) => {
                    lower[v] = l;
                    pivots.push(inv);
                }
                None => {
                    let inv = nalgebra::Cholesky::new(d)
                        .map(|c| c.inverse())
                        .unwrap_or_else(|| {
                            Matrix3::from_diagonal(&d.diagonal().map(|x| {
                                if x > 0.0 {
                                    1.0 / x
                                } else {
                                    0.0
                                }
                            }))
                        });
                    pivots.push(inv);
                }
            }
        }
        // `lower` holds B·S⁻¹ with S⁻¹ stored in `pivots`
        Self { lower, pivots }
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let blocks = self.pivots.len();
        let get = |x: &[f64], v: usize| Vector3::new(x[3 * v], x[3 * v + 1], x[3 * v + 2]);
        let mut y: Vec<Vector3<f64>> = Vec::with_capacity(blocks);
        for v in 0..blocks {
            let mut yv = get(r, v);
            if v > 0 {
                yv -= self.lower[v] * y[v - 1];
            }
            y.push(yv);
        }
        let mut next = Vector3::zeros();
        for v in (0..blocks).rev() {
            let mut zv = self.pivots[v] * y[v];
            if v + 1 < blocks {
                zv -= self.lower[v + 1].transpose() * next;
            }
            z[3 * v..3 * v + 3].copy_from_slice(zv.as_slice());
            next = zv;
        }
    }
}

/// `y = A x` for the symmetric matrix whose lower triangle is stored in `ne`'s pattern.
fn sym_matvec(ne: &NormalEquations, values: &[f64], x: &[f64], y: &mut [f64]) {
    y.iter_mut().for_each(|v| *v = 0.0);
    for c in 0..ne.dim {
        let xc = x[c];
        let mut acc = 0.0;
        for p in ne.col_ptr[c]..ne.col_ptr[c + 1] {
            let r = ne.row_idx[p];
            let v = values[p];
            y[r] += v * xc;
            if r != c {
                acc += v * x[r];
            }
        }
        y[c] += acc;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Preconditioned conjugate gradients for `A x = b`, starting from zero.
fn pcg(
    ne: &NormalEquations,
    values: &[f64],
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, usize) {
    let n = b.len();
    let pre = ChainPreconditioner::new(ne, values);
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    pre.apply(&r, &mut z);
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let target = tol * dot(b, b).sqrt();
    let mut it = 0;
    while it < max_iter && dot(&r, &r).sqrt() > target {
        it += 1;
        sym_matvec(ne, values, &p, &mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            break;
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        pre.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    (x, it)
}

struct Problem<'g> {
    graph: &'g PoseGraph,
    kernel: RobustKernel,
    /// Variable block of each node, `None` for anchored nodes.
    var_of: Vec<Option<usize>>,
    node_of: Vec<usize>,
}

impl Problem<'_> {
    fn cost(&self, poses: &[Pose2D]) -> Result<f64> {
        let mut total = 0.0;
        for (k, e) in self.graph.imu_edges.iter().enumerate() {
            let c = imu_chi2(self.graph, poses, e);
            if !c.is_finite() {
                return Err(Error::NonFiniteCost(format!(
                    "odometry edge {k} ({}-{})",
                    e.from, e.to
                )));
            }
            total += c;
        }
        for (k, e) in self.graph.rf_edges.iter().enumerate() {
            let (r, _) = rf_residual_jacobian(&poses[e.from.0], &poses[e.to.0], e.mu_d);
            let c = self.kernel.rho(e.info_scalar * r * r);
            if !c.is_finite() {
                return Err(Error::NonFiniteCost(format!(
                    "radio edge {k} ({}-{})",
                    e.from, e.to
                )));
            }
            total += c;
        }
        Ok(total)
    }

    fn linearize(&self, poses: &[Pose2D], ne: &mut NormalEquations) {
        ne.clear();
        let conv = self.graph.convention;
        for e in &self.graph.imu_edges {
            let (h, ji, jj) = conv.predict_with_jacobians(&poses[e.from.0], &poses[e.to.0]);
            let mut r = h - e.z;
            r.z = wrap_angle(r.z);
            let omega = e.info.matrix();
            self.accumulate(ne, e.from, e.to, &ji, &jj, &omega, &r);
        }
        for e in &self.graph.rf_edges {
            let (r, j) = rf_residual_jacobian(&poses[e.from.0], &poses[e.to.0], e.mu_d);
            let s = e.info_scalar * r * r;
            let w = self.kernel.weight(s) * e.info_scalar;
            // embed the scalar edge in the 3-row form used by `accumulate`
            let ji = Matrix3::from_rows(&[
                j,
                nalgebra::Matrix1x3::zeros(),
                nalgebra::Matrix1x3::zeros(),
            ]);
            let jj = -ji;
            let omega = Matrix3::from_diagonal(&Vector3::new(w, 0.0, 0.0));
            self.accumulate(
                ne,
                e.from,
                e.to,
                &ji,
                &jj,
                &omega,
                &Vector3::new(r, 0.0, 0.0),
            );
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn accumulate(
        &self,
        ne: &mut NormalEquations,
        from: NodeId,
        to: NodeId,
        ji: &Matrix3<f64>,
        jj: &Matrix3<f64>,
        omega: &Matrix3<f64>,
        r: &Vector3<f64>,
    ) {
        let vi = self.var_of[from.0];
        let vj = self.var_of[to.0];
        let wi = ji.transpose() * omega;
        let wj = jj.transpose() * omega;
        if let Some(i) = vi {
            ne.add_diag(i, &(wi * ji));
            ne.add_rhs(i, &(wi * r));
        }
        if let Some(j) = vj {
            ne.add_diag(j, &(wj * jj));
            ne.add_rhs(j, &(wj * r));
        }
        if let (Some(i), Some(j)) = (vi, vj) {
            ne.add_offdiag(i, j, &(wi * jj));
        }
    }

    fn apply(&self, poses: &[Pose2D], delta: &Col<f64>) -> Vec<Pose2D> {
        let mut out = poses.to_vec();
        for (v, &n) in self.node_of.iter().enumerate() {
            let p = &poses[n];
            out[n] = Pose2D::new(
                p.x + delta[3 * v],
                p.y + delta[3 * v + 1],
                p.theta + delta[3 * v + 2],
            );
        }
        out
    }
}

fn imu_chi2(graph: &PoseGraph, poses: &[Pose2D], e: &super::ImuEdge) -> f64 {
    let mut r = graph.convention.predict(&poses[e.from.0], &poses[e.to.0]) - e.z;
    r.z = wrap_angle(r.z);
    e.info.a * (r.x * r.x + r.y * r.y) + e.info.b * r.z * r.z
}

/// χ² of every radio edge at the graph's current state.
pub(crate) fn rf_chi2_of(
    graph: &PoseGraph,
    kernel: RobustKernel,
    statistic: PruneStatistic,
) -> Vec<f64> {
    graph
        .rf_edges
        .iter()
        .map(|e| {
            let (r, info) = graph.rf_residual(e);
            match statistic {
                PruneStatistic::Raw => info * r * r,
                PruneStatistic::Robustified => kernel.rho(info * r * r),
            }
        })
        .collect()
}

fn ensure_anchors(graph: &mut PoseGraph, auto_anchor: bool) -> Result<Vec<NodeId>> {
    let labels = graph.components();
    let n_comp = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut has_anchor = vec![false; n_comp];
    for a in &graph.anchored {
        has_anchor[labels[a.0]] = true;
    }
    let mut added = Vec::new();
    for (node, &c) in labels.iter().enumerate() {
        if !has_anchor[c] {
            if !auto_anchor {
                let size = labels.iter().filter(|&&l| l == c).count();
                return Err(Error::Underconstrained(format!(
                    "component {c} ({size} nodes, first node {node}) has no anchored node"
                )));
            }
            has_anchor[c] = true;
            graph.anchored.insert(NodeId(node));
            added.push(NodeId(node));
        }
    }
    Ok(added)
}

/// Minimizes the sum of odometry χ² and robustified radio χ² over all non-anchored
/// poses. The graph's poses are updated in place.
pub fn optimize(graph: &mut PoseGraph, cfg: &SolverConfig) -> Result<OptimizeReport> {
    cfg.validate()?;
    let auto_anchored = ensure_anchors(graph, cfg.auto_anchor)?;
    let mut var_of = vec![None; graph.nodes.len()];
    let mut node_of = Vec::new();
    for n in 0..graph.nodes.len() {
        if !graph.anchored.contains(&NodeId(n)) {
            var_of[n] = Some(node_of.len());
            node_of.push(n);
        }
    }
    let problem = Problem {
        graph,
        kernel: cfg.robust_kernel,
        var_of,
        node_of,
    };
    let mut poses = graph.nodes.clone();
    let initial_cost = problem.cost(&poses)?;
    let mut cost = initial_cost;
    let mut history = vec![cost];
    let mut iterations = 0;
    let mut accepted = 0;
    let mut termination = Termination::MaxIterations;

    let blocks = problem.node_of.len();
    let pairs = graph
        .imu_edges
        .iter()
        .map(|e| (e.from, e.to))
        .chain(graph.rf_edges.iter().map(|e| (e.from, e.to)))
        .filter_map(|(a, b)| match (problem.var_of[a.0], problem.var_of[b.0]) {
            (Some(i), Some(j)) if i != j => Some((i.max(j), i.min(j))),
            _ => None,
        });
    let mut ne = NormalEquations::new(blocks, pairs);

    if blocks == 0 || cost == 0.0 {
        termination = Termination::AlreadyOptimal;
    } else {
        let use_pcg = match cfg.linear_solver {
            LinearSolver::Pcg => true,
            LinearSolver::Cholesky => false,
            LinearSolver::Auto => blocks > AUTO_CHOLESKY_MAX_BLOCKS,
        };
        let symbolic = if use_pcg {
            None
        } else {
            Some(
                SymbolicLlt::try_new(ne.symbolic(), Side::Lower).map_err(|e| {
                    Error::Underconstrained(format!("symbolic factorization failed: {e:?}"))
                })?,
            )
        };
        let diag_pos = ne.diag_positions();
        let mut lambda = cfg.initial_lambda;
        let mut damped = vec![0.0; ne.values.len()];
        'outer: while iterations < cfg.max_iterations {
            problem.linearize(&poses, &mut ne);
            let grad_norm = ne.rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if grad_norm < 1e-12 {
                termination = Termination::AlreadyOptimal;
                break;
            }
            let max_diag = diag_pos
                .iter()
                .map(|&p| ne.values[p])
                .fold(0.0f64, f64::max);
            let floor = 1e-9 * max_diag.max(1e-12);
            let neg_rhs = Col::<f64>::from_fn(ne.dim, |i| -ne.rhs[i]);
            loop {
                if iterations >= cfg.max_iterations {
                    break 'outer;
                }
                iterations += 1;
                damped.copy_from_slice(&ne.values);
                for &p in &diag_pos {
                    damped[p] += lambda * (ne.values[p] + floor);
                }
                let delta = match &symbolic {
                    None => {
                        let b: Vec<f64> = neg_rhs.iter().copied().collect();
                        let (x, cg_iters) =
                            pcg(&ne, &damped, &b, cfg.pcg_tolerance, cfg.pcg_max_iterations);
                        debug!("pcg: {cg_iters} iterations at lambda {lambda:.1e}");
                        Col::<f64>::from_fn(ne.dim, |i| x[i])
                    }
                    Some(symbolic) => {
                        let mat = SparseColMatRef::new(ne.symbolic(), &damped);
                        match Llt::try_new_with_symbolic(symbolic.clone(), mat, Side::Lower) {
                            Ok(llt) => llt.solve(&neg_rhs),
                            Err(e) => {
                                if lambda > 1e12 {
                                    return Err(Error::Underconstrained(format!(
                                        "normal equations singular after damping: {e:?}"
                                    )));
                                }
                                lambda *= cfg.lambda_up;
                                continue;
                            }
                        }
                    }
                };
                let step_norm = delta.norm_l2();
                if !step_norm.is_finite() {
                    return Err(Error::Underconstrained(
                        "non-finite step from the linear solve".into(),
                    ));
                }
                let state_norm = problem
                    .node_of
                    .iter()
                    .map(|&n| poses[n].x.powi(2) + poses[n].y.powi(2) + poses[n].theta.powi(2))
                    .sum::<f64>()
                    .sqrt();
                if step_norm <= cfg.step_tolerance * (state_norm + cfg.step_tolerance) {
                    termination = Termination::StepTolerance;
                    break 'outer;
                }
                let trial = problem.apply(&poses, &delta);
                let trial_cost = problem.cost(&trial)?;
                if trial_cost < cost {
                    let rel = (cost - trial_cost) / cost;
                    poses = trial;
                    cost = trial_cost;
                    history.push(cost);
                    accepted += 1;
                    lambda = (lambda * cfg.lambda_down).max(1e-15);
                    if rel < cfg.cost_tolerance || cost == 0.0 {
                        termination = Termination::CostTolerance;
                        break 'outer;
                    }
                    break;
                }
                lambda *= cfg.lambda_up;
                if lambda > 1e16 {
                    termination = Termination::NoDecrease;
                    break 'outer;
                }
            }
        }
    }
    debug!(
        "optimize: cost {initial_cost:.6e} -> {cost:.6e} in {iterations} iterations ({accepted} accepted, {termination:?})"
    );
    if termination == Termination::MaxIterations {
        warn!("optimizer hit the iteration limit ({})", cfg.max_iterations);
    }
    graph.nodes = poses;
    let rf_chi2 = rf_chi2_of(graph, cfg.robust_kernel, cfg.prune_statistic);
    let imu_chi2 = graph
        .imu_edges
        .iter()
        .map(|e| imu_chi2(graph, &graph.nodes, e))
        .collect();
    graph.rf_chi2 = Some(rf_chi2.clone());
    Ok(OptimizeReport {
        initial_cost,
        final_cost: cost,
        iterations,
        accepted_steps: accepted,
        termination,
        cost_history: history,
        rf_chi2,
        imu_chi2,
        auto_anchored,
    })
}

/// Removes radio edges whose χ² is at or above `chi2_threshold`, using the values from
/// the last [`optimize`] call (or the current raw χ² when the graph has not been
/// optimized since its edges changed). Odometry
/// edges are never removed. Returns the number of edges removed.
pub fn prune_edges(graph: &mut PoseGraph, chi2_threshold: f64) -> usize {
    let chi2 = match graph.rf_chi2.take() {
        Some(c) if c.len() == graph.rf_edges.len() => c,
        _ => rf_chi2_of(graph, RobustKernel::Trivial, PruneStatistic::Raw),
    };
    let before = graph.rf_edges.len();
    let mut kept_chi2 = Vec::with_capacity(before);
    let mut it = chi2.into_iter();
    graph.rf_edges.retain(|_| {
        let c = it.next().unwrap();
        let keep = c < chi2_threshold;
        if keep {
            kept_chi2.push(c);
        }
        keep
    });
    graph.rf_chi2 = Some(kept_chi2);
    before - graph.rf_edges.len()
}
