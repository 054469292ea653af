//! Radio loop closures: node pairs whose fingerprints are similar enough to be treated
//! as near each other, turned into range constraints through the geometric model.

use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geomodel::GeoModel;
use crate::graph::{NodeId, RfEdge};
use crate::model::Trajectory;
use crate::similarity::{Fingerprint, Interner, SimilarityConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClosureConfig {
    pub threshold: f64,
    pub max_edges_per_node: usize,
    /// Same-trajectory pairs closer than this many steps are not candidates.
    pub min_intra_step_gap: usize,
    pub seed: u64,
    /// Skip pairs whose Jaccard similarity is below this before full scoring.
    pub min_jaccard: Option<f64>,
}

impl Default for ClosureConfig {
    fn default() -> Self {
        Self {
            threshold: 0.45,
            max_edges_per_node: 10,
            min_intra_step_gap: 30,
            seed: 0,
            min_jaccard: None,
        }
    }
}

impl ClosureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidInput(format!(
                "closure threshold must be in (0, 1), got {}",
                self.threshold
            )));
        }
        if self.max_edges_per_node == 0 {
            return Err(Error::InvalidInput(
                "max_edges_per_node must be at least 1".into(),
            ));
        }
        if let Some(j) = self.min_jaccard {
            if !(0.0..=1.0).contains(&j) {
                return Err(Error::InvalidInput(format!(
                    "min_jaccard must be in [0, 1], got {j}"
                )));
            }
        }
        Ok(())
    }
}

/// Dense node numbering over a set of trajectories: trajectory `t`, step `k` is node
/// `offset[t] + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeIndex {
    offsets: Vec<usize>,
    total: usize,
}

impl NodeIndex {
    pub fn new(trajectories: &[Trajectory]) -> Self {
        let mut offsets = Vec::with_capacity(trajectories.len());
        let mut total = 0;
        for t in trajectories {
            offsets.push(total);
            total += t.len();
        }
        Self { offsets, total }
    }

    pub fn node(&self, traj: usize, step: usize) -> NodeId {
        NodeId(self.offsets[traj] + step)
    }

    /// `(trajectory, step)` of a node.
    pub fn locate(&self, node: NodeId) -> (usize, usize) {
        let t = self.offsets.partition_point(|&o| o <= node.0) - 1;
        (t, node.0 - self.offsets[t])
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn trajectories(&self) -> usize {
        self.offsets.len()
    }

    pub fn range(&self, traj: usize) -> std::ops::Range<usize> {
        let end = self.offsets.get(traj + 1).copied().unwrap_or(self.total);
        self.offsets[traj]..end
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub from: NodeId,
    pub to: NodeId,
    pub similarity: f64,
}

/// Every admissible pair at or above some floor similarity, strongest first. Selecting
/// at several thresholds from one list avoids rescoring.
#[derive(Debug, Clone)]
pub struct ClosureCandidates {
    pub index: NodeIndex,
    pub min_similarity: f64,
    candidates: Vec<Candidate>,
}

impl ClosureCandidates {
    pub fn score(
        trajectories: &[Trajectory],
        simcfg: &SimilarityConfig,
        min_similarity: f64,
        min_intra_step_gap: usize,
        min_jaccard: Option<f64>,
    ) -> Result<Self> {
        simcfg.validate()?;
        let index = NodeIndex::new(trajectories);
        let mut interner = Interner::new();
        let scans: Vec<(usize, usize, Fingerprint)> = trajectories
            .iter()
            .enumerate()
            .flat_map(|(t, traj)| traj.steps().iter().enumerate().map(move |(k, s)| (t, k, s)))
            .filter_map(|(t, k, s)| s.rf().map(|o| (t, k, o)))
            .map(|(t, k, o)| (t, k, interner.fingerprint(o)))
            .collect();

        let mut candidates = Vec::new();
        for (a, (ta, ka, fa)) in scans.iter().enumerate() {
            for (tb, kb, fb) in &scans[a + 1..] {
                if ta == tb && kb - ka < min_intra_step_gap {
                    continue;
                }
                if trajectories[*ta].floor != trajectories[*tb].floor {
                    continue;
                }
                if let Some(j) = min_jaccard {
                    if fa.jaccard(fb) < j {
                        continue;
                    }
                }
                let g = fa.compound(fb, simcfg);
                if g >= min_similarity {
                    candidates.push(Candidate {
                        from: index.node(*ta, *ka),
                        to: index.node(*tb, *kb),
                        similarity: g,
                    });
                }
            }
        }
        candidates.sort_by(|x, y| {
            y.similarity
                .total_cmp(&x.similarity)
                .then((x.from, x.to).cmp(&(y.from, y.to)))
        });
        Ok(Self {
            index,
            min_similarity,
            candidates,
        })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn all(&self) -> &[Candidate] {
        &self.candidates
    }

    /// Greedy strongest-first selection of pairs with `g ≥ threshold`, each node
    /// keeping at most `max_edges_per_node` closures. Sorted by node pair.
    pub fn select(&self, threshold: f64, max_edges_per_node: usize) -> Vec<Candidate> {
        if threshold < self.min_similarity {
            warn!(
                "threshold {threshold} is below the scoring floor {}; pairs in between are missing",
                self.min_similarity
            );
        }
        let mut degree = vec![0usize; self.index.len()];
        let mut out: Vec<Candidate> = self
            .candidates
            .iter()
            .take_while(|c| c.similarity >= threshold)
            .filter(|c| {
                let ok =
                    degree[c.from.0] < max_edges_per_node && degree[c.to.0] < max_edges_per_node;
                if ok {
                    degree[c.from.0] += 1;
                    degree[c.to.0] += 1;
                }
                ok
            })
            .copied()
            .collect();
        out.sort_by_key(|c| (c.from, c.to));
        out
    }
}

/// Range edges `(μ_d, 1/σ_d²)` for selected pairs.
pub fn closures_to_edges(selected: &[Candidate], model: &GeoModel) -> Result<Vec<RfEdge>> {
    selected
        .iter()
        .map(|c| {
            let prior = model.predict(c.similarity);
            if !(prior.mu > 0.0 && prior.var > 0.0 && prior.mu.is_finite() && prior.var.is_finite())
            {
                return Err(Error::InvalidInput(format!(
                    "model predicts an unusable distance prior at similarity {}",
                    c.similarity
                )));
            }
            Ok(RfEdge {
                from: c.from,
                to: c.to,
                mu_d: prior.mu,
                info_scalar: prior.info(),
                similarity: c.similarity,
            })
        })
        .collect()
}

/// Radio closures over all trajectories, as graph edges on the [`NodeIndex`] numbering.
pub fn build_closures(
    trajectories: &[Trajectory],
    model: &GeoModel,
    simcfg: &SimilarityConfig,
    cfg: &ClosureConfig,
) -> Result<Vec<RfEdge>> {
    cfg.validate()?;
    let cands = ClosureCandidates::score(
        trajectories,
        simcfg,
        cfg.threshold,
        cfg.min_intra_step_gap,
        cfg.min_jaccard,
    )?;
    let selected = cands.select(cfg.threshold, cfg.max_edges_per_node);
    if selected.is_empty() {
        warn!(
            "no radio closures at threshold {}; graph will not fuse",
            cfg.threshold
        );
    }
    closures_to_edges(&selected, model)
}

/// CSV with columns `from_traj,from_step,to_traj,to_step,similarity,mu_d,var_d`.
pub fn write_closures_csv<W: Write>(
    edges: &[RfEdge],
    trajectories: &[Trajectory],
    mut w: W,
) -> Result<()> {
    let index = NodeIndex::new(trajectories);
    writeln!(
        w,
        "from_traj,from_step,to_traj,to_step,similarity,mu_d,var_d"
    )?;
    for e in edges {
        let (ta, ka) = index.locate(e.from);
        let (tb, kb) = index.locate(e.to);
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            trajectories[ta].id,
            ka,
            trajectories[tb].id,
            kb,
            e.similarity,
            e.mu_d,
            1.0 / e.info_scalar
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geomodel::{DistancePrior, ZetaMethod};
    use crate::model::{Pose2D, RfObservation, Step};
    use proptest::prelude::*;

    fn model() -> GeoModel {
        GeoModel {
            w0: 1.5,
            w1: -3.0,
            bins: 20,
            samples: 1000,
            method: ZetaMethod::Mle,
            beta: 1.0,
            sigma_kernel: 10.0,
            missing_value: -100.0,
        }
    }

    fn traj(id: &str, scans: Vec<Option<RfObservation>>) -> Trajectory {
        let steps = scans
            .into_iter()
            .enumerate()
            .map(|(k, observation)| Step {
                pose: Pose2D::new(k as f64, 0.0, 0.0),
                observation,
                timestamp: k as f64,
            })
            .collect();
        Trajectory::new(id, 0, steps).unwrap()
    }

    fn obs(r: &[(&str, f64)]) -> RfObservation {
        RfObservation::from_readings(r.iter().map(|&(k, v)| (k, v))).unwrap()
    }

    #[test]
    fn identical_scans_close_with_the_model_distance() {
        let o = obs(&[("a", -50.0), ("b", -60.0)]);
        let t = vec![
            traj("A", vec![Some(o.clone()), None]),
            traj("B", vec![None, Some(o)]),
        ];
        let edges = build_closures(
            &t,
            &model(),
            &SimilarityConfig::default(),
            &ClosureConfig::default(),
        )
        .unwrap();
        assert_eq!(edges.len(), 1);
        let e = &edges[0];
        assert_eq!((e.from, e.to), (NodeId(0), NodeId(3)));
        assert_eq!(e.similarity, 1.0);
        assert_eq!(e.mu_d, model().predict(1.0).mu);
        assert_eq!(
            e.info_scalar,
            DistancePrior::from_zeta(model().zeta(1.0)).info()
        );
    }

    #[test]
    fn intra_pairs_respect_the_step_gap() {
        let o = obs(&[("a", -50.0)]);
        let mut scans = vec![None; 40];
        scans[0] = Some(o.clone());
        scans[10] = Some(o.clone());
        scans[35] = Some(o);
        let t = vec![traj("A", scans)];
        let edges = build_closures(
            &t,
            &model(),
            &SimilarityConfig::default(),
            &ClosureConfig::default(),
        )
        .unwrap();
        let pairs: Vec<_> = edges.iter().map(|e| (e.from.0, e.to.0)).collect();
        assert_eq!(pairs, vec![(0, 35)]);
    }

    #[test]
    fn node_cap_keeps_the_strongest() {
        let hub = obs(&[("a", -50.0), ("b", -50.0)]);
        let t: Vec<Trajectory> = (0..5)
            .map(|k| {
                let o = obs(&[("a", -50.0), ("b", -50.0 - 2.0 * k as f64)]);
                traj(
                    &format!("T{k}"),
                    vec![Some(if k == 0 { hub.clone() } else { o }), None],
                )
            })
            .collect();
        let cfg = ClosureConfig {
            max_edges_per_node: 2,
            threshold: 0.1,
            ..Default::default()
        };
        let edges = build_closures(&t, &model(), &SimilarityConfig::default(), &cfg).unwrap();
        let hub_edges: Vec<_> = edges
            .iter()
            .filter(|e| e.from == NodeId(0))
            .map(|e| e.to.0)
            .collect();
        // equal-gap neighbours tie and go in node order; the hub's second slot then goes
        // to the only walker still below the cap
        assert_eq!(hub_edges, vec![2, 8]);
        let mut degree = [0; 10];
        for e in &edges {
            degree[e.from.0] += 1;
            degree[e.to.0] += 1;
        }
        assert!(degree.iter().all(|&d| d <= 2));
    }

    #[test]
    fn floors_do_not_mix() {
        let o = obs(&[("a", -50.0)]);
        let a = traj("A", vec![Some(o.clone()), None]);
        let mut b = traj("B", vec![Some(o), None]);
        b.floor = 1;
        let edges = build_closures(
            &[a, b],
            &model(),
            &SimilarityConfig::default(),
            &ClosureConfig::default(),
        )
        .unwrap();
        assert!(edges.is_empty());
    }

    #[test]
    fn node_index_round_trips() {
        let t = vec![
            traj("A", vec![None; 3]),
            traj("B", vec![None; 2]),
            traj("C", vec![None; 4]),
        ];
        let idx = NodeIndex::new(&t);
        assert_eq!(idx.len(), 9);
        for (ti, tr) in t.iter().enumerate() {
            for k in 0..tr.len() {
                assert_eq!(idx.locate(idx.node(ti, k)), (ti, k));
            }
        }
        assert_eq!(idx.range(1), 3..5);
    }

    #[test]
    fn csv_lists_every_edge() {
        let o = obs(&[("a", -50.0)]);
        let t = vec![
            traj("A", vec![Some(o.clone()), None]),
            traj("B", vec![None, Some(o)]),
        ];
        let edges = build_closures(
            &t,
            &model(),
            &SimilarityConfig::default(),
            &ClosureConfig::default(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_closures_csv(&edges, &t, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "from_traj,from_step,to_traj,to_step,similarity,mu_d,var_d"
        );
        assert!(lines[1].starts_with("A,0,B,1,1,"));
        assert_eq!(lines.len(), 2);
    }

    #[test]
    fn rejects_bad_config() {
        for cfg in [
            ClosureConfig {
                threshold: 0.0,
                ..Default::default()
            },
            ClosureConfig {
                threshold: 1.0,
                ..Default::default()
            },
            ClosureConfig {
                max_edges_per_node: 0,
                ..Default::default()
            },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    fn random_trajs() -> impl Strategy<Value = Vec<Trajectory>> {
        let scan = proptest::option::weighted(
            0.7,
            proptest::collection::btree_map(0u8..6, -95.0f64..-40.0, 1..5),
        );
        proptest::collection::vec(proptest::collection::vec(scan, 2..12), 1..4).prop_map(|ts| {
            ts.into_iter()
                .enumerate()
                .map(|(i, scans)| {
                    let scans = scans
                        .into_iter()
                        .map(|m| {
                            m.map(|m| {
                                RfObservation::from_readings(
                                    m.into_iter().map(|(k, v)| (format!("ap{k}"), v)),
                                )
                                .unwrap()
                            })
                        })
                        .collect();
                    traj(&format!("T{i}"), scans)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn selection_is_monotone_and_well_formed(trajs in random_trajs(), cap in 1usize..4) {
            let simcfg = SimilarityConfig::default();
            let cands = ClosureCandidates::score(&trajs, &simcfg, 0.0, 3, None).unwrap();
            let mut prev = usize::MAX;
            for t in [0.05, 0.25, 0.45, 0.65, 0.85, 0.95] {
                let sel = cands.select(t, cap);
                prop_assert!(sel.len() <= prev);
                prev = sel.len();
                let mut seen = std::collections::BTreeSet::new();
                for c in &sel {
                    prop_assert!(c.from < c.to);
                    prop_assert!(c.similarity >= t);
                    prop_assert!(seen.insert((c.from, c.to)));
                }
                let edges = closures_to_edges(&sel, &model()).unwrap();
                for (e, c) in edges.iter().zip(&sel) {
                    let p = model().predict(c.similarity);
                    prop_assert_eq!(e.info_scalar, 1.0 / p.var);
                }
            }
        }
    }
}
