//! Reference feature map and k-nearest-neighbour positioning over `1 − g`.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{RfObservation, Trajectory};
use crate::similarity::{compound_similarity, SimilarityConfig};

/// A planar position with a floor label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub x: f64,
    pub y: f64,
    pub floor: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfmEntry {
    pub x: f64,
    pub y: f64,
    pub floor: i32,
    pub readings: RfObservation,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Rfm {
    pub entries: Vec<RfmEntry>,
}

impl Rfm {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut entries = Vec::new();
        for (k, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: RfmEntry = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: k + 1,
                msg: e.to_string(),
            })?;
            if e.readings.is_empty() {
                return Err(Error::Parse {
                    line: k + 1,
                    msg: "map entry without readings".into(),
                });
            }
            entries.push(e);
        }
        Ok(Self { entries })
    }
}

/// One entry per scan-bearing step, at the step's pose.
pub fn build_rfm(trajectories: &[Trajectory]) -> Rfm {
    let entries: Vec<RfmEntry> = trajectories
        .iter()
        .flat_map(|t| {
            t.steps().iter().filter_map(move |s| {
                s.rf().map(|o| RfmEntry {
                    x: s.pose.x,
                    y: s.pose.y,
                    floor: t.floor,
                    readings: o.clone(),
                })
            })
        })
        .collect();
    if entries.is_empty() {
        warn!("radio map is empty");
    }
    Rfm { entries }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub location: Location,
    pub neighbors: Vec<Neighbor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnConfig {
    pub k: usize,
    /// Weight neighbours by similarity instead of a plain mean.
    pub weighted: bool,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            k: 5,
            weighted: false,
        }
    }
}

/// Unweighted kNN position with a majority-vote floor.
pub fn knn_locate(
    rfm: &Rfm,
    query: &RfObservation,
    k: usize,
    simcfg: &SimilarityConfig,
) -> Result<Estimate> {
    knn_locate_with(rfm, query, &KnnConfig { k, weighted: false }, simcfg)
}

pub fn knn_locate_with(
    rfm: &Rfm,
    query: &RfObservation,
    cfg: &KnnConfig,
    simcfg: &SimilarityConfig,
) -> Result<Estimate> {
    if rfm.is_empty() {
        return Err(Error::InsufficientData("radio map is empty".into()));
    }
    if cfg.k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let k = if cfg.k > rfm.len() {
        warn!(
            "k = {} exceeds the radio map size {}; using all entries",
            cfg.k,
            rfm.len()
        );
        rfm.len()
    } else {
        cfg.k
    };
    let mut all: Vec<Neighbor> = rfm
        .entries
        .iter()
        .enumerate()
        .map(|(index, e)| Neighbor {
            index,
            distance: 1.0 - compound_similarity(query, &e.readings, simcfg),
        })
        .collect();
    let by_distance = |a: &Neighbor, b: &Neighbor| {
        a.distance
            .total_cmp(&b.distance)
            .then(a.index.cmp(&b.index))
    };
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, by_distance);
        all.truncate(k);
    }
    all.sort_by(by_distance);

    let weights: Vec<f64> = if cfg.weighted {
        all.iter().map(|n| 1.0 - n.distance).collect()
    } else {
        vec![1.0; k]
    };
    let total: f64 = weights.iter().sum();
    let weights = if total > 0.0 { weights } else { vec![1.0; k] };
    let total: f64 = weights.iter().sum();
    let (mut x, mut y) = (0.0, 0.0);
    for (n, w) in all.iter().zip(&weights) {
        x += w * rfm.entries[n.index].x;
        y += w * rfm.entries[n.index].y;
    }

    let mut votes: BTreeMap<i32, usize> = BTreeMap::new();
    for n in &all {
        *votes.entry(rfm.entries[n.index].floor).or_default() += 1;
    }
    let top = votes.values().copied().max().unwrap_or(0);
    let floor = all
        .iter()
        .map(|n| rfm.entries[n.index].floor)
        .find(|f| votes[f] == top)
        .expect("at least one neighbour");

    Ok(Estimate {
        location: Location {
            x: x / total,
            y: y / total,
            floor,
        },
        neighbors: all,
    })
}
