//! JSON Lines trace and ground-truth files.
//!
//! A trace record is one step of one walker:
//!
//! ```text
//! {"traj_id":"traj000","floor":0,"t":0.5,"dx":0.7,"dy":0.01,"dth":0.02,"rf":{"f0:ap001":-61.2}}
//! ```
//!
//! `dx, dy, dth` is the body-frame increment from the previous step (zero on a walker's
//! first record); local poses are rebuilt by integrating them. `rf` is `null` for steps
//! without a scan. Records of one walker keep file order; walkers keep the order of
//! their first record.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Pose2D, RfObservation, Step, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub traj_id: String,
    pub floor: i32,
    pub t: f64,
    pub dx: f64,
    pub dy: f64,
    pub dth: f64,
    pub rf: Option<RfObservation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub traj_id: String,
    pub step: usize,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

fn jsonl<T: for<'de> Deserialize<'de>, R: BufRead>(r: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: k + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_traces<W: Write>(trajectories: &[Trajectory], mut w: W) -> Result<()> {
    for t in trajectories {
        let mut prev = None;
        for s in t.steps() {
            let (dx, dy, dth) = prev.map_or((0.0, 0.0, 0.0), |p: Pose2D| p.increment_to(&s.pose));
            prev = Some(s.pose);
            let rec = TraceRecord {
                traj_id: t.id.clone(),
                floor: t.floor,
                t: s.timestamp,
                dx,
                dy,
                dth,
                rf: s.observation.clone(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            writeln!(w)?;
        }
    }
    Ok(())
}

/// Groups records by walker and integrates the increments from the origin.
pub fn read_traces<R: BufRead>(r: R) -> Result<Vec<Trajectory>> {
    let records: Vec<TraceRecord> = jsonl(r)?;
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, (i32, Vec<Step>)> = HashMap::new();
    for rec in records {
        if ![rec.dx, rec.dy, rec.dth, rec.t]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::InvalidInput(format!(
                "non-finite values in trace {}",
                rec.traj_id
            )));
        }
        let entry = groups.entry(rec.traj_id.clone()).or_insert_with(|| {
            order.push(rec.traj_id.clone());
            (rec.floor, Vec::new())
        });
        if entry.0 != rec.floor {
            return Err(Error::InvalidInput(format!(
                "trace {} changes floor",
                rec.traj_id
            )));
        }
        let pose = match entry.1.last() {
            Some(prev) => prev.pose.compose(rec.dx, rec.dy, rec.dth),
            None => Pose2D::origin(),
        };
        entry.1.push(Step {
            pose,
            observation: rec.rf,
            timestamp: rec.t,
        });
    }
    order
        .into_iter()
        .map(|id| {
            let (floor, steps) = groups.remove(&id).unwrap();
            Trajectory::new(id, floor, steps)
        })
        .collect()
}

pub fn write_truth<W: Write>(ids: &[&str], truth: &[Vec<Pose2D>], mut w: W) -> Result<()> {
    for (id, poses) in ids.iter().zip(truth) {
        for (step, p) in poses.iter().enumerate() {
            let rec = TruthRecord {
                traj_id: id.to_string(),
                step,
                x: p.x,
                y: p.y,
                theta: p.theta,
            };
            serde_json::to_writer(&mut w, &rec)?;
            writeln!(w)?;
        }
    }
    Ok(())
}

/// Ground-truth poses keyed by walker id, indexed by step.
pub fn read_truth<R: BufRead>(r: R) -> Result<HashMap<String, Vec<Pose2D>>> {
    let records: Vec<TruthRecord> = jsonl(r)?;
    let mut out: HashMap<String, Vec<Pose2D>> = HashMap::new();
    for rec in records {
        let poses = out.entry(rec.traj_id.clone()).or_default();
        if rec.step != poses.len() {
            return Err(Error::InvalidInput(format!(
                "truth for {} jumps to step {} after {}",
                rec.traj_id,
                rec.step,
                poses.len()
            )));
        }
        poses.push(Pose2D::new(rec.x, rec.y, rec.theta));
    }
    Ok(out)
}

/// Ground truth lined up with `trajectories`; every walker must be covered step for step.
pub fn truth_for(
    trajectories: &[Trajectory],
    truth: &HashMap<String, Vec<Pose2D>>,
) -> Result<Vec<Vec<Pose2D>>> {
    trajectories
        .iter()
        .map(|t| match truth.get(&t.id) {
            Some(p) if p.len() == t.len() => Ok(p.clone()),
            Some(p) => Err(Error::InvalidInput(format!(
                "truth for {} has {} steps, trace has {}",
                t.id,
                p.len(),
                t.len()
            ))),
            None => Err(Error::InvalidInput(format!("no ground truth for {}", t.id))),
        })
        .collect()
}

pub fn write_trajectories_jsonl<W: Write>(trajectories: &[Trajectory], w: W) -> Result<()> {
    let ids: Vec<&str> = trajectories.iter().map(|t| t.id.as_str()).collect();
    let poses: Vec<Vec<Pose2D>> = trajectories
        .iter()
        .map(|t| t.poses().copied().collect())
        .collect();
    write_truth(&ids, &poses, w)
}
