//! Synthetic venues, radio maps and crowd-sourced walks.
//!
//! Access points follow a log-distance path-loss model with log-normal shadowing.
//! Walkers take bounded random walks; their odometry integrates the true step
//! increments corrupted by white noise and a constant per-walker heading bias, and
//! their scans are generated at the true positions.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{wrap_angle, Pose2D, RfObservation, Step, Trajectory};
use crate::rng;

/// Axis-aligned venue footprint `[0, width] × [0, height]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub width: f64,
    pub height: f64,
}

impl Extent {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (0.0..=self.width).contains(&x) && (0.0..=self.height).contains(&y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioParams {
    /// Received strength at the reference distance (dBm).
    pub tx_power: f64,
    pub path_loss_exponent: f64,
    pub d0: f64,
    pub shadowing_sigma: f64,
    /// Readings weaker than this are not reported (dBm).
    pub dropout_floor: f64,
    /// Probability that a reading is missing from a scan regardless of strength.
    pub p_drop: f64,
    /// Extra attenuation per floor crossed (dB).
    pub floor_penalty: f64,
    pub floor_height: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            tx_power: -40.0,
            path_loss_exponent: 2.5,
            d0: 1.0,
            shadowing_sigma: 4.0,
            dropout_floor: -95.0,
            p_drop: 0.1,
            floor_penalty: 15.0,
            floor_height: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessPoint {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub floor: i32,
    pub tx_power: f64,
    pub path_loss_exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub extent: Extent,
    pub floors: usize,
    pub aps: Vec<AccessPoint>,
    pub radio: RadioParams,
}

impl Environment {
    /// Same venue with shadowing and random dropouts switched off.
    pub fn noiseless(&self) -> Self {
        let mut env = self.clone();
        env.radio.shadowing_sigma = 0.0;
        env.radio.p_drop = 0.0;
        env
    }

    /// Mean received strength from `ap` at `(x, y, floor)`, before noise and dropout.
    pub fn mean_rssi(&self, ap: &AccessPoint, x: f64, y: f64, floor: i32) -> f64 {
        let r = &self.radio;
        let dz = (floor - ap.floor) as f64 * r.floor_height;
        let d = ((x - ap.x).powi(2) + (y - ap.y).powi(2) + dz * dz).sqrt();
        ap.tx_power
            - 10.0 * ap.path_loss_exponent * (d.max(r.d0) / r.d0).log10()
            - r.floor_penalty * (floor - ap.floor).abs() as f64
    }
}

/// Places `n_aps_per_floor` access points uniformly at random on every floor.
pub fn generate_environment(
    seed: u64,
    extent: Extent,
    floors: usize,
    n_aps_per_floor: usize,
    radio: RadioParams,
) -> Result<Environment> {
    if !(extent.width > 0.0 && extent.height > 0.0) {
        return Err(Error::InvalidInput(format!(
            "extent must be positive, got {} x {}",
            extent.width, extent.height
        )));
    }
    if floors == 0 || n_aps_per_floor == 0 {
        return Err(Error::InvalidInput(
            "need at least one floor and one access point".into(),
        ));
    }
    if !(1.5..=6.0).contains(&radio.path_loss_exponent) {
        return Err(Error::InvalidInput(format!(
            "path-loss exponent {} outside [1.5, 6]",
            radio.path_loss_exponent
        )));
    }
    if !(radio.shadowing_sigma >= 0.0) || !(0.0..=1.0).contains(&radio.p_drop) || !(radio.d0 > 0.0)
    {
        return Err(Error::InvalidInput("invalid radio parameters".into()));
    }
    let mut rng = rng::stream(seed, u64::MAX);
    let mut aps = Vec::with_capacity(floors * n_aps_per_floor);
    for floor in 0..floors {
        for k in 0..n_aps_per_floor {
            aps.push(AccessPoint {
                id: format!("f{floor}:ap{k:03}"),
                x: rng.gen_range(0.0..=extent.width),
                y: rng.gen_range(0.0..=extent.height),
                floor: floor as i32,
                tx_power: radio.tx_power,
                path_loss_exponent: radio.path_loss_exponent,
            });
        }
    }
    Ok(Environment {
        extent,
        floors,
        aps,
        radio,
    })
}

/// One scan at `(x, y, floor)` drawn from `rng`.
pub fn observe(env: &Environment, x: f64, y: f64, floor: i32, rng: &mut impl Rng) -> RfObservation {
    let shadow =
        Normal::new(0.0, env.radio.shadowing_sigma).expect("shadowing sigma is non-negative");
    let mut obs = RfObservation::new();
    for ap in &env.aps {
        // draw both variates unconditionally so the stream layout is fixed
        let noise = shadow.sample(rng);
        let dropped = rng.gen_bool(env.radio.p_drop);
        let rssi = env.mean_rssi(ap, x, y, floor) + noise;
        if !dropped && rssi >= env.radio.dropout_floor {
            obs.insert(ap.id.clone(), rssi);
        }
    }
    obs
}

/// Seeded single scan; see [`observe`].
pub fn simulate_observation(env: &Environment, pos: (f64, f64, i32), seed: u64) -> RfObservation {
    let mut rng = rng::stream(seed, 0);
    observe(env, pos.0, pos.1, pos.2, &mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkParams {
    pub n_traj: usize,
    pub steps: usize,
    pub step_len: f64,
    /// Std-dev of the true heading change per step (degrees).
    pub turn_sigma_deg: f64,
    /// Odometry position noise per step (m).
    pub pos_noise: f64,
    /// Odometry heading noise per step (degrees).
    pub heading_noise_deg: f64,
    /// Per-walker constant heading bias is uniform in ±this (degrees per step).
    pub heading_bias_max_deg: f64,
    /// Every `rf_period`-th step carries a scan.
    pub rf_period: usize,
    /// Seconds per step.
    pub dt: f64,
}

impl Default for WalkParams {
    fn default() -> Self {
        Self {
            n_traj: 40,
            steps: 300,
            step_len: 0.7,
            turn_sigma_deg: 8.0,
            pos_noise: 0.05,
            heading_noise_deg: 0.3,
            heading_bias_max_deg: 0.2,
            rf_period: 4,
            dt: 0.5,
        }
    }
}

impl WalkParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_traj == 0 || self.steps < 2 || self.rf_period == 0 {
            return Err(Error::InvalidInput(
                "need n_traj ≥ 1, steps ≥ 2 and rf_period ≥ 1".into(),
            ));
        }
        let nonneg = [
            self.turn_sigma_deg,
            self.pos_noise,
            self.heading_noise_deg,
            self.heading_bias_max_deg,
        ];
        if !(self.step_len > 0.0 && self.dt > 0.0) || nonneg.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidInput(
                "walk parameters must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn noiseless(&self) -> Self {
        Self {
            pos_noise: 0.0,
            heading_noise_deg: 0.0,
            heading_bias_max_deg: 0.0,
            ..self.clone()
        }
    }
}

/// A walk: the true common-frame poses plus what a phone would report.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrajectory {
    pub truth: Vec<Pose2D>,
    pub trajectory: Trajectory,
}

fn reflect(extent: &Extent, mut x: f64, mut y: f64, mut heading: f64) -> (f64, f64, f64) {
    if x < 0.0 {
        x = -x;
        heading = PI - heading;
    } else if x > extent.width {
        x = 2.0 * extent.width - x;
        heading = PI - heading;
    }
    if y < 0.0 {
        y = -y;
        heading = -heading;
    } else if y > extent.height {
        y = 2.0 * extent.height - y;
        heading = -heading;
    }
    (
        x.clamp(0.0, extent.width),
        y.clamp(0.0, extent.height),
        wrap_angle(heading),
    )
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("noise sigma is non-negative")
}

/// Walker `index` on a random floor.
pub fn generate_trajectory(
    env: &Environment,
    params: &WalkParams,
    index: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SimTrajectory> {
    let ext = env.extent;
    let floor = rng.gen_range(0..env.floors) as i32;
    let turn = normal(params.turn_sigma_deg.to_radians());
    let pos_noise = normal(params.pos_noise);
    let heading_noise = normal(params.heading_noise_deg.to_radians());
    let bias = rng.gen_range(-1.0..=1.0) * params.heading_bias_max_deg.to_radians();

    let mut truth = Vec::with_capacity(params.steps);
    let mut p = Pose2D::new(
        rng.gen_range(0.0..=ext.width),
        rng.gen_range(0.0..=ext.height),
        rng.gen_range(-PI..PI),
    );
    truth.push(p);
    for _ in 1..params.steps {
        let heading = p.theta + turn.sample(rng);
        let (x, y, heading) = reflect(
            &ext,
            p.x + params.step_len * heading.cos(),
            p.y + params.step_len * heading.sin(),
            heading,
        );
        p = Pose2D::new(x, y, heading);
        truth.push(p);
    }

    let mut steps = Vec::with_capacity(params.steps);
    let mut local = Pose2D::origin();
    for (k, t) in truth.iter().enumerate() {
        if k > 0 {
            let (dx, dy, dth) = truth[k - 1].increment_to(t);
            local = local.compose(
                dx + pos_noise.sample(rng),
                dy + pos_noise.sample(rng),
                dth + heading_noise.sample(rng) + bias,
            );
        }
        let observation = (k % params.rf_period == 0).then(|| observe(env, t.x, t.y, floor, rng));
        steps.push(Step {
            pose: local,
            observation,
            timestamp: k as f64 * params.dt,
        });
    }
    Ok(SimTrajectory {
        truth,
        trajectory: Trajectory::new(format!("traj{index:03}"), floor, steps)?,
    })
}

/// `n_traj` independent walkers; walker `k` uses its own stream derived from `seed`.
pub fn generate_trajectories(
    env: &Environment,
    params: &WalkParams,
    seed: u64,
) -> Result<Vec<SimTrajectory>> {
    params.validate()?;
    (0..params.n_traj)
        .map(|k| generate_trajectory(env, params, k, &mut rng::stream(seed, k as u64)))
        .collect()
}

/// A positioning query with known ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub x: f64,
    pub y: f64,
    pub floor: i32,
    pub observation: RfObservation,
}

/// Scans at uniformly random positions and floors.
pub fn generate_queries(env: &Environment, n: usize, seed: u64) -> Vec<Query> {
    let mut rng = rng::stream(seed, u64::MAX - 1);
    (0..n)
        .map(|_| {
            let x = rng.gen_range(0.0..=env.extent.width);
            let y = rng.gen_range(0.0..=env.extent.height);
            let floor = rng.gen_range(0..env.floors) as i32;
            let observation = observe(env, x, y, floor, &mut rng);
            Query {
                x,
                y,
                floor,
                observation,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::euclidean_distance;
    use crate::similarity::{compound_similarity, SimilarityConfig};

    fn env(seed: u64) -> Environment {
        generate_environment(
            seed,
            Extent {
                width: 100.0,
                height: 50.0,
            },
            1,
            30,
            RadioParams::default(),
        )
        .unwrap()
    }

    #[test]
    fn environment_examples() {
        assert_eq!(env(4), env(4));
        let e = env(4);
        assert_eq!(e.aps.len(), 30);
        assert!(e.aps.iter().all(|a| e.extent.contains(a.x, a.y)));
        let two = generate_environment(1, e.extent, 2, 10, RadioParams::default()).unwrap();
        let f0: Vec<_> = two
            .aps
            .iter()
            .filter(|a| a.floor == 0)
            .map(|a| a.id.clone())
            .collect();
        let f1: Vec<_> = two
            .aps
            .iter()
            .filter(|a| a.floor == 1)
            .map(|a| a.id.clone())
            .collect();
        assert_eq!((f0.len(), f1.len()), (10, 10));
        assert!(f0.iter().all(|id| !f1.contains(id)));
        assert!(generate_environment(1, e.extent, 1, 0, RadioParams::default()).is_err());
        assert!(generate_environment(
            1,
            Extent {
                width: -1.0,
                height: 5.0
            },
            1,
            3,
            RadioParams::default()
        )
        .is_err());
    }

    #[test]
    fn observation_examples() {
        let mut e = env(2).noiseless();
        e.aps.truncate(1);
        let ap = e.aps[0].clone();
        let o = simulate_observation(&e, (ap.x, ap.y, 0), 1);
        assert_eq!(o.get(&ap.id), Some(ap.tx_power));

        e.aps[0].path_loss_exponent = 2.0;
        let x = if ap.x > 50.0 {
            ap.x - 10.0
        } else {
            ap.x + 10.0
        };
        let o = simulate_observation(&e, (x, ap.y, 0), 1);
        assert!((o.get(&ap.id).unwrap() - (ap.tx_power - 20.0)).abs() < 1e-12);

        e.radio.dropout_floor = f64::INFINITY;
        assert!(simulate_observation(&e, (x, ap.y, 0), 1).is_empty());
    }

    #[test]
    fn mean_rssi_matches_path_loss_over_many_draws() {
        let mut e = env(3);
        e.radio.p_drop = 0.0;
        e.radio.dropout_floor = f64::NEG_INFINITY;
        e.aps.truncate(1);
        let ap = e.aps[0].clone();
        let (x, y) = (ap.x + 6.0 * 0.6, ap.y + 6.0 * 0.8);
        let mut rng = rng::stream(77, 0);
        let n = 10_000;
        let mean = (0..n)
            .map(|_| observe(&e, x, y, 0, &mut rng).get(&ap.id).unwrap())
            .sum::<f64>()
            / n as f64;
        let expected = ap.tx_power - 25.0 * 6f64.log10();
        // standard error is 4 / 100
        assert!((mean - expected).abs() < 0.16, "{mean} vs {expected}");
    }

    #[test]
    fn noiseless_walks_reproduce_truth_in_the_local_frame() {
        let e = env(5);
        let params = WalkParams {
            n_traj: 3,
            steps: 120,
            ..WalkParams::default()
        }
        .noiseless();
        for sim in generate_trajectories(&e, &params, 11).unwrap() {
            let t0 = sim.truth[0];
            for (s, t) in sim.trajectory.steps().iter().zip(&sim.truth) {
                let (dx, dy, dth) = t0.increment_to(t);
                assert!((s.pose.x - dx).abs() < 1e-9 && (s.pose.y - dy).abs() < 1e-9);
                assert!(wrap_angle(s.pose.theta - dth).abs() < 1e-9);
            }
            assert!(sim.truth.iter().all(|p| e.extent.contains(p.x, p.y)));
        }
    }

    #[test]
    fn walks_are_deterministic_and_scan_on_schedule() {
        let e = env(6);
        let params = WalkParams {
            n_traj: 4,
            steps: 50,
            rf_period: 1,
            ..WalkParams::default()
        };
        let a = generate_trajectories(&e, &params, 3).unwrap();
        assert_eq!(a, generate_trajectories(&e, &params, 3).unwrap());
        assert!(a.iter().all(|s| s
            .trajectory
            .steps()
            .iter()
            .all(|st| st.observation.is_some())));
        assert!(a.iter().all(|s| s.truth.len() == s.trajectory.len()));
        let p4 = WalkParams {
            rf_period: 4,
            ..params
        };
        let b = generate_trajectories(&e, &p4, 3).unwrap();
        let with_rf = b[0]
            .trajectory
            .steps()
            .iter()
            .filter(|s| s.observation.is_some())
            .count();
        assert_eq!(with_rf, 13);
    }

    #[test]
    fn heading_bias_drift_follows_the_integrated_bias() {
        // straight walks in a venue too large to reach a wall
        let e = generate_environment(
            1,
            Extent {
                width: 1e4,
                height: 1e4,
            },
            1,
            1,
            RadioParams::default(),
        )
        .unwrap();
        let base = WalkParams {
            n_traj: 1,
            steps: 201,
            turn_sigma_deg: 0.0,
            ..WalkParams::default()
        }
        .noiseless();
        let drift_at = |p: &WalkParams, k: usize| {
            let s = &generate_trajectories(&e, p, 21).unwrap()[0];
            let (dx, dy, _) = s.truth[0].increment_to(&s.truth[k]);
            let q = s.trajectory.steps()[k].pose;
            ((q.x - dx).hypot(q.y - dy), q.theta)
        };
        // the drawn bias shows up as the first heading increment of a straight walk
        let biased = WalkParams {
            heading_bias_max_deg: 0.5,
            ..base.clone()
        };
        let (_, heading) = drift_at(&biased, 1);
        let beta = heading;
        // step j is taken with accumulated heading error j·beta
        let analytic = |k: usize| {
            let (mut sx, mut sy) = (0.0, 0.0);
            for j in 0..k {
                let a = j as f64 * beta;
                sx += a.cos() - 1.0;
                sy += a.sin();
            }
            base.step_len * sx.hypot(sy)
        };
        let mut prev = 0.0;
        for k in [50, 100, 200] {
            let (d, _) = drift_at(&biased, k);
            assert!(
                (d - analytic(k)).abs() < 1e-6,
                "k = {k}: {d} vs {}",
                analytic(k)
            );
            assert!(drift_at(&base, k).0 < 1e-9);
            assert!(d > 2.0 * prev, "drift {d} not superlinear after {prev}");
            prev = d;
        }
    }

    #[test]
    fn nearby_scans_are_more_similar() {
        let e = env(8);
        let params = WalkParams {
            n_traj: 10,
            steps: 300,
            ..WalkParams::default()
        };
        let sims = generate_trajectories(&e, &params, 9).unwrap();
        let cfg = SimilarityConfig::default();
        let mut scans = Vec::new();
        for s in &sims {
            for (k, st) in s.trajectory.steps().iter().enumerate() {
                if let Some(o) = st.rf() {
                    scans.push((s.truth[k], o.clone()));
                }
            }
        }
        let mut rng = rng::stream(1, 1);
        let pairs: Vec<(f64, f64)> = (0..1000)
            .map(|_| {
                let a = rng.gen_range(0..scans.len());
                let b = rng.gen_range(0..scans.len());
                (
                    euclidean_distance(&scans[a].0, &scans[b].0),
                    -compound_similarity(&scans[a].1, &scans[b].1, &cfg),
                )
            })
            .collect();
        let rho = spearman(&pairs);
        assert!(rho > 0.3, "rank correlation {rho}");
    }

    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                r[k] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    }

    fn spearman(pairs: &[(f64, f64)]) -> f64 {
        let a = ranks(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
        let b = ranks(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }
}
