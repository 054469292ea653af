//! Shared domain types: planar poses, radio observations and trajectories.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps an angle to the half-open interval (−π, π].
pub fn wrap_angle(t: f64) -> f64 {
    let mut a = t.rem_euclid(TAU);
    if a > PI {
        a -= TAU;
    }
    // rem_euclid may round up to exactly TAU for tiny negative inputs
    if a <= -PI {
        a += TAU;
    }
    a
}

/// A planar pose. `theta` is kept wrapped to (−π, π].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn origin() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn xy(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    /// Composes `self` with an increment expressed in `self`'s body frame.
    pub fn compose(&self, dx: f64, dy: f64, dtheta: f64) -> Self {
        let (s, c) = self.theta.sin_cos();
        Self::new(
            self.x + c * dx - s * dy,
            self.y + s * dx + c * dy,
            self.theta + dtheta,
        )
    }

    /// Body-frame increment that takes `self` to `other` (inverse of [`Pose2D::compose`]).
    pub fn increment_to(&self, other: &Pose2D) -> (f64, f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let gx = other.x - self.x;
        let gy = other.y - self.y;
        (
            c * gx + s * gy,
            -s * gx + c * gy,
            wrap_angle(other.theta - self.theta),
        )
    }
}

/// Planar distance between two poses; headings are ignored.
pub fn euclidean_distance(a: &Pose2D, b: &Pose2D) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Signal strengths (dBm) keyed by source identifier, e.g. an access point MAC.
///
/// Absent sources are absent keys. Iteration is in identifier order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RfObservation {
    readings: BTreeMap<String, f64>,
}

impl RfObservation {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds an observation, rejecting non-finite strengths and duplicate identifiers.
    pub fn from_readings<I, S>(readings: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut obs = Self::new();
        for (id, rssi) in readings {
            let id = id.into();
            if !rssi.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "non-finite signal strength for source {id}"
                )));
            }
            if obs.readings.insert(id.clone(), rssi).is_some() {
                return Err(Error::InvalidInput(format!("duplicate source {id}")));
            }
        }
        Ok(obs)
    }

    /// Inserts or replaces one reading. Panics on a non-finite strength.
    pub fn insert(&mut self, id: impl Into<String>, rssi: f64) {
        assert!(rssi.is_finite(), "signal strength must be finite");
        self.readings.insert(id.into(), rssi);
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.readings.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> + '_ {
        self.readings.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.readings.keys().map(String::as_str)
    }

    pub fn readings(&self) -> &BTreeMap<String, f64> {
        &self.readings
    }
}

/// One record of a trajectory: a local-frame pose, the radio scan taken there (if any)
/// and its timestamp in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub pose: Pose2D,
    pub observation: Option<RfObservation>,
    pub timestamp: f64,
}

impl Step {
    /// The attached observation, treating an empty scan like no scan.
    pub fn rf(&self) -> Option<&RfObservation> {
        self.observation.as_ref().filter(|o| !o.is_empty())
    }
}

/// A dead-reckoned trajectory in its own local frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub floor: i32,
    steps: Vec<Step>,
}

impl Trajectory {
    /// Validates the step sequence: at least two steps, strictly increasing timestamps,
    /// finite poses.
    pub fn new(id: impl Into<String>, floor: i32, steps: Vec<Step>) -> Result<Self> {
        let id = id.into();
        if steps.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "trajectory {id} has {} steps, need at least 2",
                steps.len()
            )));
        }
        for (k, w) in steps.windows(2).enumerate() {
            if !(w[1].timestamp > w[0].timestamp) {
                return Err(Error::InvalidInput(format!(
                    "trajectory {id}: timestamps not strictly increasing at step {}",
                    k + 1
                )));
            }
        }
        if let Some(k) = steps.iter().position(|s| !s.pose.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "trajectory {id}: non-finite pose at step {k}"
            )));
        }
        Ok(Self { id, floor, steps })
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn poses(&self) -> impl Iterator<Item = &Pose2D> + '_ {
        self.steps.iter().map(|s| &s.pose)
    }

    /// Indices of steps carrying a non-empty radio observation.
    pub fn rf_indices(&self) -> Vec<usize> {
        self.steps
            .iter()
            .enumerate()
            .filter(|(_, s)| s.rf().is_some())
            .map(|(i, _)| i)
            .collect()
    }

    /// Copy of this trajectory with every pose replaced, keeping observations and timestamps.
    pub fn with_poses(&self, poses: &[Pose2D]) -> Result<Self> {
        if poses.len() != self.steps.len() {
            return Err(Error::InvalidInput(format!(
                "trajectory {}: {} poses for {} steps",
                self.id,
                poses.len(),
                self.steps.len()
            )));
        }
        let steps = self
            .steps
            .iter()
            .zip(poses)
            .map(|(s, p)| Step {
                pose: *p,
                ..s.clone()
            })
            .collect();
        Ok(Self {
            id: self.id.clone(),
            floor: self.floor,
            steps,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn distance_examples() {
        let d = euclidean_distance(&Pose2D::new(0.0, 0.0, 0.3), &Pose2D::new(0.0, 0.0, -2.0));
        assert_eq!(d, 0.0);
        let d = euclidean_distance(&Pose2D::origin(), &Pose2D::new(3.0, 4.0, 0.0));
        assert_eq!(d, 5.0);
        let d = euclidean_distance(&Pose2D::new(1.0, 1.0, 0.0), &Pose2D::new(-2.0, 5.0, 1.2));
        assert!((d - 5.0).abs() < 1e-15);
    }

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_angle(0.0), 0.0);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-3.5 * PI) - 0.5 * PI).abs() < 1e-12);
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
    }

    #[test]
    fn compose_and_increment_are_inverse() {
        let a = Pose2D::new(1.0, -2.0, 0.7);
        let b = a.compose(0.5, 0.2, -0.1);
        let (dx, dy, dth) = a.increment_to(&b);
        assert!((dx - 0.5).abs() < 1e-12);
        assert!((dy - 0.2).abs() < 1e-12);
        assert!((dth + 0.1).abs() < 1e-12);
    }

    #[test]
    fn trajectory_validation() {
        let step = |t: f64| Step {
            pose: Pose2D::origin(),
            observation: None,
            timestamp: t,
        };
        assert!(Trajectory::new("a", 0, vec![step(0.0)]).is_err());
        assert!(Trajectory::new("a", 0, vec![step(0.0), step(0.0)]).is_err());
        assert!(Trajectory::new("a", 0, vec![step(0.0), step(1.0)]).is_ok());
    }

    #[test]
    fn observation_rejects_bad_readings() {
        assert!(RfObservation::from_readings([("a", f64::NAN)]).is_err());
        assert!(RfObservation::from_readings([("a", -50.0), ("a", -60.0)]).is_err());
        let o = RfObservation::from_readings([("b", -50.0), ("a", -60.0)]).unwrap();
        assert_eq!(o.ids().collect::<Vec<_>>(), vec!["a", "b"]);
    }

    fn pose() -> impl Strategy<Value = Pose2D> {
        (-1e3..1e3f64, -1e3..1e3f64, -10.0..10.0f64).prop_map(|(x, y, t)| Pose2D::new(x, y, t))
    }

    proptest! {
        #[test]
        fn distance_is_a_metric(a in pose(), b in pose(), c in pose()) {
            let ab = euclidean_distance(&a, &b);
            prop_assert_eq!(ab, euclidean_distance(&b, &a));
            prop_assert!(ab >= 0.0);
            prop_assert!(ab <= euclidean_distance(&a, &c) + euclidean_distance(&c, &b) + 1e-9);
            let same = Pose2D::new(a.x, a.y, a.theta + 1.0);
            prop_assert_eq!(euclidean_distance(&a, &same), 0.0);
        }

        #[test]
        fn wrap_is_idempotent_and_in_range(t in -1e4..1e4f64) {
            let w = wrap_angle(t);
            prop_assert!(w > -PI && w <= PI);
            prop_assert_eq!(wrap_angle(w), w);
            let k = ((t - w) / TAU).round();
            prop_assert!((t - w - k * TAU).abs() < 1e-9);
        }
    }
}
