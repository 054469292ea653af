//! Pose graph with odometry and radio range edges.
//!
//! Odometry ("IMU") edges join consecutive poses of one trajectory and carry a full
//! 3-vector measurement with a diagonal information matrix. Radio ("RF") edges join
//! any two poses and constrain only their planar distance: the residual vanishes on
//! the circle of radius `mu_d` around either endpoint.

mod io;
mod solver;

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::{Matrix1x3, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{wrap_angle, Pose2D};

pub use io::{read_graph, write_graph, GRAPH_FORMAT_HEADER};
pub use solver::{
    optimize, prune_edges, LinearSolver, OptimizeReport, PruneStatistic, RobustKernel,
    SolverConfig, Termination, AUTO_CHOLESKY_MAX_BLOCKS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Rotation convention of the odometry observation model.
///
/// `AsPrinted` applies `R(θ_i)` to `p_i − p_j` and uses `θ_i − θ_j`. `Transposed` is
/// the usual relative-pose form, `R(θ_i)ᵀ (p_j − p_i)` and `θ_j − θ_i`. Measurements
/// must be produced with the same convention the graph is solved with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImuConvention {
    #[default]
    AsPrinted,
    Transposed,
}

impl ImuConvention {
    pub fn predict(self, pi: &Pose2D, pj: &Pose2D) -> Vector3<f64> {
        self.predict_with_jacobians(pi, pj).0
    }

    /// Prediction plus its Jacobians with respect to `(x, y, θ)` of each endpoint.
    pub fn predict_with_jacobians(
        self,
        pi: &Pose2D,
        pj: &Pose2D,
    ) -> (Vector3<f64>, Matrix3<f64>, Matrix3<f64>) {
        let (s, c) = pi.theta.sin_cos();
        match self {
            ImuConvention::AsPrinted => {
                let dx = pi.x - pj.x;
                let dy = pi.y - pj.y;
                let h = Vector3::new(
                    c * dx - s * dy,
                    s * dx + c * dy,
                    wrap_angle(pi.theta - pj.theta),
                );
                #[rustfmt::skip]
                let ji = Matrix3::new(
                    c, -s, -s * dx - c * dy,
                    s,  c,  c * dx - s * dy,
                    0.0, 0.0, 1.0,
                );
                #[rustfmt::skip]
                let jj = Matrix3::new(
                    -c,  s, 0.0,
                    -s, -c, 0.0,
                    0.0, 0.0, -1.0,
                );
                (h, ji, jj)
            }
            ImuConvention::Transposed => {
                let gx = pj.x - pi.x;
                let gy = pj.y - pi.y;
                let h = Vector3::new(
                    c * gx + s * gy,
                    -s * gx + c * gy,
                    wrap_angle(pj.theta - pi.theta),
                );
                #[rustfmt::skip]
                let ji = Matrix3::new(
                    -c, -s, -s * gx + c * gy,
                     s, -c, -c * gx - s * gy,
                    0.0, 0.0, -1.0,
                );
                #[rustfmt::skip]
                let jj = Matrix3::new(
                     c, s, 0.0,
                    -s, c, 0.0,
                    0.0, 0.0, 1.0,
                );
                (h, ji, jj)
            }
        }
    }

    /// Moves a whole trajectory rigidly so its odometry measurements stay satisfied:
    /// positions are rotated by `angle` about the origin and shifted by `shift`; headings
    /// turn by `angle` (`Transposed`) or by `-angle` (`AsPrinted`).
    pub fn transform(self, pose: &Pose2D, angle: f64, shift: [f64; 2]) -> Pose2D {
        let (s, c) = angle.sin_cos();
        let heading = match self {
            ImuConvention::AsPrinted => pose.theta - angle,
            ImuConvention::Transposed => pose.theta + angle,
        };
        Pose2D::new(
            c * pose.x - s * pose.y + shift[0],
            s * pose.x + c * pose.y + shift[1],
            heading,
        )
    }
}

/// Odometry observation model with the rotation applied exactly as `R(θ_i)(p_i − p_j)`.
pub fn imu_predict(pi: &Pose2D, pj: &Pose2D) -> Vector3<f64> {
    ImuConvention::AsPrinted.predict(pi, pj)
}

/// Diagonal odometry information `diag(a, a, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuInfo {
    pub a: f64,
    pub b: f64,
}

impl Default for ImuInfo {
    fn default() -> Self {
        Self { a: 500.0, b: 70.0 }
    }
}

impl ImuInfo {
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(self.a, self.a, self.b))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImuEdge {
    pub from: NodeId,
    pub to: NodeId,
    pub z: Vector3<f64>,
    pub info: ImuInfo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RfEdge {
    pub from: NodeId,
    pub to: NodeId,
    pub mu_d: f64,
    /// Inverse distance variance (m⁻²).
    pub info_scalar: f64,
    pub similarity: f64,
}

/// Below this separation the radio residual's gradient direction is undefined.
pub(crate) const MIN_RF_SEPARATION: f64 = 1e-6;

/// Distance residual and the Jacobian row for the `from` endpoint (the `to` row is its
/// negation).
pub fn rf_residual_jacobian(pi: &Pose2D, pj: &Pose2D, mu_d: f64) -> (f64, Matrix1x3<f64>) {
    let dx = pi.x - pj.x;
    let dy = pi.y - pj.y;
    let d = dx.hypot(dy);
    let j = if d < MIN_RF_SEPARATION {
        Matrix1x3::new(1.0, 0.0, 0.0)
    } else {
        Matrix1x3::new(dx / d, dy / d, 0.0)
    };
    (d - mu_d, j)
}

#[derive(Debug, Clone, Default)]
pub struct PoseGraph {
    pub nodes: Vec<Pose2D>,
    pub imu_edges: Vec<ImuEdge>,
    pub rf_edges: Vec<RfEdge>,
    pub anchored: BTreeSet<NodeId>,
    pub convention: ImuConvention,
    /// Robustified χ² of each radio edge from the last optimization.
    pub(crate) rf_chi2: Option<Vec<f64>>,
}

impl PoseGraph {
    pub fn new(convention: ImuConvention) -> Self {
        Self {
            convention,
            ..Default::default()
        }
    }

    pub fn add_node(&mut self, pose: Pose2D) -> NodeId {
        self.nodes.push(pose);
        NodeId(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn pose(&self, id: NodeId) -> &Pose2D {
        &self.nodes[id.0]
    }

    fn check_node(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::InvalidInput(format!(
                "node {id} does not exist ({} nodes)",
                self.nodes.len()
            )));
        }
        Ok(())
    }

    pub fn add_imu_edge(
        &mut self,
        from: NodeId,
        to: NodeId,
        z: Vector3<f64>,
        info: ImuInfo,
    ) -> Result<()> {
        self.check_node(from)?;
        self.check_node(to)?;
        if from == to {
            return Err(Error::InvalidInput(format!(
                "odometry edge from {from} to itself"
            )));
        }
        if !(info.a > 0.0 && info.b > 0.0) {
            return Err(Error::InvalidInput(
                "odometry information must be positive".into(),
            ));
        }
        self.imu_edges.push(ImuEdge { from, to, z, info });
        Ok(())
    }

    pub fn add_rf_edge(&mut self, edge: RfEdge) -> Result<()> {
        self.check_node(edge.from)?;
        self.check_node(edge.to)?;
        if edge.from == edge.to {
            return Err(Error::InvalidInput(format!(
                "radio edge from {} to itself",
                edge.from
            )));
        }
        if !(edge.mu_d > 0.0 && edge.info_scalar > 0.0) {
            return Err(Error::InvalidInput(format!(
                "radio edge {}-{} needs positive distance and information",
                edge.from, edge.to
            )));
        }
        self.rf_edges.push(edge);
        self.rf_chi2 = None;
        Ok(())
    }

    pub fn anchor(&mut self, id: NodeId) -> Result<()> {
        self.check_node(id)?;
        self.anchored.insert(id);
        Ok(())
    }

    /// Odometry residual (angle wrapped) and its information matrix.
    pub fn imu_residual(&self, e: &ImuEdge) -> (Vector3<f64>, Matrix3<f64>) {
        let mut r = self.convention.predict(self.pose(e.from), self.pose(e.to)) - e.z;
        r.z = wrap_angle(r.z);
        (r, e.info.matrix())
    }

    /// Distance residual `|p_from − p_to| − mu_d` and the scalar information.
    pub fn rf_residual(&self, e: &RfEdge) -> (f64, f64) {
        let (r, _) = rf_residual_jacobian(self.pose(e.from), self.pose(e.to), e.mu_d);
        (r, e.info_scalar)
    }

    /// Labels each node with the index of its connected component.
    pub fn components(&self) -> Vec<usize> {
        let mut parent: Vec<usize> = (0..self.nodes.len()).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        let pairs = self
            .imu_edges
            .iter()
            .map(|e| (e.from, e.to))
            .chain(self.rf_edges.iter().map(|e| (e.from, e.to)));
        for (a, b) in pairs {
            let ra = find(&mut parent, a.0);
            let rb = find(&mut parent, b.0);
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
        let mut label = vec![usize::MAX; self.nodes.len()];
        let mut next = 0;
        for i in 0..self.nodes.len() {
            let r = find(&mut parent, i);
            if label[r] == usize::MAX {
                label[r] = next;
                next += 1;
            }
            label[i] = label[r];
        }
        label
    }

    /// Robustified χ² of each radio edge from the last [`optimize`] call, if any.
    pub fn rf_chi2(&self) -> Option<&[f64]> {
        self.rf_chi2.as_deref()
    }
}
