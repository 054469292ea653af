//! Line-oriented text dump of a pose graph.
//!
//! ```text
//! # crowdmap-graph v1
//! CONVENTION as_printed
//! NODE id x y theta
//! FIX id
//! EDGE_IMU i j dx dy dth a b
//! EDGE_RF i j mu info sim
//! ```
//!
//! The first line is the version header. Node ids are dense and must appear in
//! order. Other lines starting with `#` and blank lines are ignored. Numbers are
//! written in shortest round-trip form, so a dump reloads bit-exactly.

use std::io::{BufRead, Write};

use nalgebra::Vector3;

use super::{ImuConvention, ImuInfo, NodeId, PoseGraph, RfEdge};
use crate::error::{Error, Result};
use crate::model::Pose2D;

pub const GRAPH_FORMAT_HEADER: &str = "# crowdmap-graph v1";

pub fn write_graph<W: Write>(graph: &PoseGraph, mut w: W) -> Result<()> {
    writeln!(w, "{GRAPH_FORMAT_HEADER}")?;
    let conv = match graph.convention {
        ImuConvention::AsPrinted => "as_printed",
        ImuConvention::Transposed => "transposed",
    };
    writeln!(w, "CONVENTION {conv}")?;
    for (i, p) in graph.nodes.iter().enumerate() {
        writeln!(w, "NODE {i} {} {} {}", p.x, p.y, p.theta)?;
    }
    for a in &graph.anchored {
        writeln!(w, "FIX {a}")?;
    }
    for e in &graph.imu_edges {
        writeln!(
            w,
            "EDGE_IMU {} {} {} {} {} {} {}",
            e.from, e.to, e.z.x, e.z.y, e.z.z, e.info.a, e.info.b
        )?;
    }
    for e in &graph.rf_edges {
        writeln!(
            w,
            "EDGE_RF {} {} {} {} {}",
            e.from, e.to, e.mu_d, e.info_scalar, e.similarity
        )?;
    }
    Ok(())
}

pub fn read_graph<R: BufRead>(r: R) -> Result<PoseGraph> {
    let mut graph = PoseGraph::default();
    let mut lines = r.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line?,
        None => String::new(),
    };
    if header.trim() != GRAPH_FORMAT_HEADER {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header {GRAPH_FORMAT_HEADER:?}"),
        });
    }
    for (k, line) in lines {
        let line = line?;
        let lineno = k + 1;
        let err = |msg: String| Error::Parse { line: lineno, msg };
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let tag = fields.next().unwrap();
        let rest: Vec<&str> = fields.collect();
        let nums = |n: usize| -> Result<Vec<f64>> {
            if rest.len() != n {
                return Err(err(format!("{tag} expects {n} fields, got {}", rest.len())));
            }
            rest.iter()
                .map(|s| s.parse::<f64>().map_err(|e| err(format!("{s:?}: {e}"))))
                .collect()
        };
        let id = |s: &str| -> Result<NodeId> {
            s.parse::<usize>()
                .map(NodeId)
                .map_err(|e| err(format!("bad node id {s:?}: {e}")))
        };
        match tag {
            "CONVENTION" => {
                graph.convention = match rest.as_slice() {
                    ["as_printed"] => ImuConvention::AsPrinted,
                    ["transposed"] => ImuConvention::Transposed,
                    _ => return Err(err(format!("unknown convention {rest:?}"))),
                }
            }
            "NODE" => {
                let v = nums(4)?;
                if id(rest[0])?.0 != graph.nodes.len() {
                    return Err(err(format!(
                        "node ids must be dense and ordered, got {}",
                        rest[0]
                    )));
                }
                graph.add_node(Pose2D::new(v[1], v[2], v[3]));
            }
            "FIX" => {
                if rest.len() != 1 {
                    return Err(err("FIX expects one node id".into()));
                }
                graph.anchor(id(rest[0])?).map_err(|e| err(e.to_string()))?;
            }
            "EDGE_IMU" => {
                let v = nums(7)?;
                graph
                    .add_imu_edge(
                        id(rest[0])?,
                        id(rest[1])?,
                        Vector3::new(v[2], v[3], v[4]),
                        ImuInfo { a: v[5], b: v[6] },
                    )
                    .map_err(|e| err(e.to_string()))?;
            }
            "EDGE_RF" => {
                let v = nums(5)?;
                graph
                    .add_rf_edge(RfEdge {
                        from: id(rest[0])?,
                        to: id(rest[1])?,
                        mu_d: v[2],
                        info_scalar: v[3],
                        similarity: v[4],
                    })
                    .map_err(|e| err(e.to_string()))?;
            }
            other => return Err(err(format!("unknown record {other:?}"))),
        }
    }
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_reloads_exactly() {
        let mut g = PoseGraph::new(ImuConvention::Transposed);
        let a = g.add_node(Pose2D::new(0.1, -2.0 / 3.0, 1.0));
        let b = g.add_node(Pose2D::new(1e-17, 5.5, -3.0));
        let c = g.add_node(Pose2D::new(7.0, 1.0, 0.25));
        g.anchor(a).unwrap();
        g.add_imu_edge(a, b, Vector3::new(0.3, 0.1, -0.2), ImuInfo::default())
            .unwrap();
        g.add_rf_edge(RfEdge {
            from: a,
            to: c,
            mu_d: 2.5,
            info_scalar: 0.58,
            similarity: 0.61,
        })
        .unwrap();
        let mut buf = Vec::new();
        write_graph(&g, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(GRAPH_FORMAT_HEADER));
        let back = read_graph(buf.as_slice()).unwrap();
        assert_eq!(back.nodes, g.nodes);
        assert_eq!(back.imu_edges, g.imu_edges);
        assert_eq!(back.rf_edges, g.rf_edges);
        assert_eq!(back.anchored, g.anchored);
        assert_eq!(back.convention, g.convention);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(read_graph("NODE 0 0 0 0\n".as_bytes()).is_err());
        let bad = format!("{GRAPH_FORMAT_HEADER}\nNODE 1 0 0 0\n");
        assert!(matches!(
            read_graph(bad.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
        let bad = format!("{GRAPH_FORMAT_HEADER}\nNODE 0 0 0 0\nEDGE_RF 0 3 1 1 1\n");
        assert!(read_graph(bad.as_bytes()).is_err());
        let bad = format!("{GRAPH_FORMAT_HEADER}\nNODE 0 0 x 0\n");
        assert!(read_graph(bad.as_bytes()).is_err());
        let ok = format!("{GRAPH_FORMAT_HEADER}\n\n# comment\nNODE 0 0 0 0\n");
        assert_eq!(read_graph(ok.as_bytes()).unwrap().len(), 1);
    }
}
