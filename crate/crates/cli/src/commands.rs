use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crowdmap::eval::{ate, positioning_errors, summarize, write_ecdf_csv, ErrorSummary};
use crowdmap::fusion::{default_sweep_thresholds, fuse, threshold_sweep, FusionResult};
use crowdmap::geomodel::{fit_geomodel, GeoModel};
use crowdmap::graph::write_graph;
use crowdmap::io::{read_traces, read_truth, truth_for, write_traces, write_trajectories_jsonl, write_truth};
use crowdmap::loopclosure::write_closures_csv;
use crowdmap::positioning::{build_rfm, knn_locate_with, Estimate, Location, Rfm};
use crowdmap::simulator::{generate_environment, generate_queries, generate_trajectories};
use crowdmap::{Pose2D, RfObservation, Trajectory};
use log::info;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::run::RunDir;

/// One positioning query; the position fields are present when ground truth is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub rf: RfObservation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<i32>,
}

impl QueryRecord {
    pub fn truth(&self) -> Option<Location> {
        Some(Location { x: self.x?, y: self.y?, floor: self.floor? })
    }
}

fn parse_jsonl<T: for<'de> Deserialize<'de>>(bytes: &[u8], what: &str) -> Result<Vec<T>, CliError> {
    let text = std::str::from_utf8(bytes).map_err(|e| CliError::Data(format!("{what}: {e}")))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| serde_json::from_str(l).map_err(|e| CliError::Data(format!("{what} line {}: {e}", k + 1))))
        .collect()
}

pub fn load_traces(run: &mut RunDir, path: &Path) -> Result<Vec<Trajectory>, CliError> {
    let bytes = run.read_input(path)?;
    let trajs = read_traces(bytes.as_slice())?;
    if trajs.is_empty() {
        return Err(CliError::Data(format!("{} holds no trajectories", path.display())));
    }
    Ok(trajs)
}

/// Poses in trace order for every trajectory, from a truth-format file.
pub fn load_poses(run: &mut RunDir, path: &Path, trajs: &[Trajectory]) -> Result<Vec<Vec<Pose2D>>, CliError> {
    let bytes = run.read_input(path)?;
    Ok(truth_for(trajs, &read_truth(bytes.as_slice())?)?)
}

pub fn load_queries(run: &mut RunDir, path: &Path) -> Result<Vec<QueryRecord>, CliError> {
    let bytes = run.read_input(path)?;
    let q: Vec<QueryRecord> = parse_jsonl(&bytes, "queries")?;
    if q.is_empty() {
        return Err(CliError::Data(format!("{} holds no queries", path.display())));
    }
    Ok(q)
}

pub fn load_rfm(run: &mut RunDir, path: &Path) -> Result<Rfm, CliError> {
    let bytes = run.read_input(path)?;
    let rfm = Rfm::read_jsonl(bytes.as_slice())?;
    if rfm.is_empty() {
        return Err(CliError::Data(format!("{} is an empty radio map", path.display())));
    }
    Ok(rfm)
}

pub fn load_model(run: &mut RunDir, path: &Path) -> Result<GeoModel, CliError> {
    let bytes = run.read_input(path)?;
    let text = String::from_utf8(bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(GeoModel::from_json(&text)?)
}

/// Writes traces, ground truth, queries and the venue; returns the queries.
pub fn simulate(cfg: &PipelineConfig, run: &mut RunDir) -> Result<Vec<QueryRecord>, CliError> {
    let s = &cfg.simulator;
    let env = generate_environment(s.seed, s.extent(), s.floors, s.aps_per_floor, s.radio.clone())
        .map_err(|e| CliError::Config(e.to_string()))?;
    let sims = generate_trajectories(&env, &s.walk, s.seed)?;
    let queries: Vec<QueryRecord> = generate_queries(&env, s.queries, s.seed)
        .into_iter()
        .map(|q| QueryRecord { rf: q.observation, x: Some(q.x), y: Some(q.y), floor: Some(q.floor) })
        .collect();

    let trajs: Vec<Trajectory> = sims.iter().map(|s| s.trajectory.clone()).collect();
    let mut w = run.create_file("traces.jsonl")?;
    write_traces(&trajs, &mut w)?;
    w.flush()?;
    let ids: Vec<&str> = trajs.iter().map(|t| t.id.as_str()).collect();
    let truth: Vec<Vec<Pose2D>> = sims.iter().map(|s| s.truth.clone()).collect();
    let mut w = run.create_file("truth.jsonl")?;
    write_truth(&ids, &truth, &mut w)?;
    w.flush()?;
    let mut w = run.create_file("queries.jsonl")?;
    for q in &queries {
        serde_json::to_writer(&mut w, q)?;
        writeln!(w)?;
    }
    w.flush()?;
    run.write_json("environment.json", &env)?;
    info!("simulated {} trajectories and {} queries", sims.len(), queries.len());
    Ok(queries)
}

pub fn fit_model(cfg: &PipelineConfig, run: &mut RunDir, trajs: &[Trajectory]) -> Result<GeoModel, CliError> {
    let (model, bins) = fit_geomodel(trajs, &cfg.similarity, &cfg.geomodel)?;
    let mut w = run.create_file("geomodel.json")?;
    writeln!(w, "{}", model.to_json()?)?;
    w.flush()?;
    let mut w = run.create_file("diagnostics.csv")?;
    writeln!(w, "center,zeta,count")?;
    for b in &bins {
        writeln!(w, "{},{},{}", b.center, b.zeta, b.count)?;
    }
    w.flush()?;
    info!("fitted w0 = {:.4}, w1 = {:.4} over {} bins", model.w0, model.w1, bins.len());
    Ok(model)
}

/// Rigid alignment of each floor onto ground truth, since floors are fused separately.
#[derive(Debug, Clone, Serialize)]
pub struct FloorAte {
    pub floor: i32,
    pub points: usize,
    pub rmse: f64,
    pub angle: f64,
    pub translation: [f64; 2],
}

#[derive(Debug, Clone, Serialize)]
pub struct AteReport {
    pub rmse: f64,
    pub floors: Vec<FloorAte>,
}

pub fn align_to_truth(fused: &[Trajectory], truth: &[Vec<Pose2D>]) -> Result<(AteReport, Vec<Trajectory>), CliError> {
    let mut by_floor: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (i, t) in fused.iter().enumerate() {
        by_floor.entry(t.floor).or_default().push(i);
    }
    let mut aligned: Vec<Option<Trajectory>> = vec![None; fused.len()];
    let mut floors = Vec::new();
    let (mut sq, mut n) = (0.0, 0usize);
    for (floor, members) in by_floor {
        let est: Vec<[f64; 2]> = members.iter().flat_map(|&i| fused[i].poses().map(Pose2D::xy)).collect();
        let tru: Vec<[f64; 2]> = members.iter().flat_map(|&i| truth[i].iter().map(Pose2D::xy)).collect();
        let r = ate(&est, &tru)?;
        for &i in &members {
            let poses: Vec<Pose2D> = fused[i]
                .poses()
                .map(|p| {
                    let q = r.alignment.apply(p.xy());
                    Pose2D::new(q[0], q[1], crowdmap::wrap_angle(p.theta + r.alignment.angle))
                })
                .collect();
            aligned[i] = Some(fused[i].with_poses(&poses)?);
        }
        sq += r.rmse * r.rmse * est.len() as f64;
        n += est.len();
        floors.push(FloorAte {
            floor,
            points: est.len(),
            rmse: r.rmse,
            angle: r.alignment.angle,
            translation: r.alignment.translation,
        });
    }
    let report = AteReport { rmse: (sq / n as f64).sqrt(), floors };
    Ok((report, aligned.into_iter().map(|t| t.expect("every trajectory has a floor")).collect()))
}

#[derive(Debug, Serialize)]
struct FloorSummary {
    floor: i32,
    trajectories: usize,
    nodes: usize,
    closures: usize,
    pruned: usize,
    groups: usize,
    iterations: Vec<usize>,
    final_cost: f64,
}

#[derive(Debug, Serialize)]
struct FusionSummary {
    threshold: f64,
    closures: usize,
    pruned: usize,
    ate: Option<AteReport>,
    floors: Vec<FloorSummary>,
}

fn write_fusion(run: &mut RunDir, result: &FusionResult) -> Result<(), CliError> {
    let mut w = run.create_file("fused.jsonl")?;
    write_trajectories_jsonl(&result.trajectories, &mut w)?;
    w.flush()?;
    let mut w = run.create_file("rfm.jsonl")?;
    build_rfm(&result.trajectories).write_jsonl(&mut w)?;
    w.flush()?;
    for f in &result.floors {
        let mut w = run.create_file(&format!("graph-floor{}.txt", f.floor))?;
        write_graph(&f.graph, &mut w)?;
        w.flush()?;
        let members: Vec<Trajectory> = f.members.iter().map(|&i| result.trajectories[i].clone()).collect();
        let mut w = run.create_file(&format!("closures-floor{}.csv", f.floor))?;
        write_closures_csv(&f.graph.rf_edges, &members, &mut w)?;
        w.flush()?;
    }
    Ok(())
}

pub fn fuse_traces(
    cfg: &PipelineConfig,
    run: &mut RunDir,
    trajs: &[Trajectory],
    model: &GeoModel,
    truth: Option<&[Vec<Pose2D>]>,
    sweep: bool,
) -> Result<FusionResult, CliError> {
    let result = fuse(trajs, model, &cfg.fusion)?;
    write_fusion(run, &result)?;
    let ate = truth.map(|t| align_to_truth(&result.trajectories, t)).transpose()?.map(|(r, _)| r);
    if let Some(a) = &ate {
        info!("fusion ATE {:.3} m", a.rmse);
    }
    let summary = FusionSummary {
        threshold: cfg.fusion.closure.threshold,
        closures: result.closures(),
        pruned: result.pruned(),
        ate,
        floors: result
            .floors
            .iter()
            .map(|f| FloorSummary {
                floor: f.floor,
                trajectories: f.members.len(),
                nodes: f.graph.len(),
                closures: f.closures,
                pruned: f.pruned,
                groups: f.registration.seeds.len(),
                iterations: f.reports.iter().map(|r| r.iterations).collect(),
                final_cost: f.reports.last().map_or(0.0, |r| r.final_cost),
            })
            .collect(),
    };
    run.write_json("fusion.json", &summary)?;
    if sweep {
        let rows = threshold_sweep(trajs, model, &cfg.fusion, &default_sweep_thresholds())?;
        let mut w = run.create_file("sweep.csv")?;
        writeln!(w, "threshold,edges,pruned,ate")?;
        for (t, r) in &rows {
            let a = match truth {
                Some(tr) => format!("{}", align_to_truth(&r.trajectories, tr)?.0.rmse),
                None => String::new(),
            };
            writeln!(w, "{t:.2},{},{},{a}", r.closures(), r.pruned())?;
        }
        w.flush()?;
    }
    Ok(result)
}

/// ATE report plus the fused map re-expressed in the ground-truth frame.
pub fn evaluate_fusion(
    run: &mut RunDir,
    fused: &[Trajectory],
    truth: &[Vec<Pose2D>],
) -> Result<(AteReport, Vec<Trajectory>), CliError> {
    let (report, aligned) = align_to_truth(fused, truth)?;
    run.write_json("ate.json", &report)?;
    let mut w = run.create_file("rfm-aligned.jsonl")?;
    build_rfm(&aligned).write_jsonl(&mut w)?;
    w.flush()?;
    info!("ATE {:.3} m", report.rmse);
    Ok((report, aligned))
}

fn locate_all(cfg: &PipelineConfig, rfm: &Rfm, queries: &[QueryRecord]) -> Result<Vec<Estimate>, CliError> {
    queries
        .iter()
        .map(|q| Ok(knn_locate_with(rfm, &q.rf, &cfg.positioning, &cfg.similarity)?))
        .collect()
}

fn score(estimates: &[Estimate], queries: &[QueryRecord]) -> Result<Option<ErrorSummary>, CliError> {
    let Some(truths) = queries.iter().map(QueryRecord::truth).collect::<Option<Vec<_>>>() else {
        return Ok(None);
    };
    let locs: Vec<Location> = estimates.iter().map(|e| e.location).collect();
    let (e, h) = positioning_errors(&locs, &truths)?;
    Ok(Some(summarize(&e, &h)?))
}

/// Table of the statistics of both maps, one row per statistic.
pub fn comparison_table(mss: &ErrorSummary, ccs: &ErrorSummary) -> String {
    let rows = [
        ("min_m", mss.min, ccs.min),
        ("mean_m", mss.mean, ccs.mean),
        ("cep68_m", mss.cep68, ccs.cep68),
        ("cep95_m", mss.cep95, ccs.cep95),
        ("floor_accuracy", mss.floor_accuracy, ccs.floor_accuracy),
    ];
    let mut out = String::from("metric,mss,ccs\n");
    for (name, a, b) in rows {
        out.push_str(&format!("{name},{a:.4},{b:.4}\n"));
    }
    out
}

/// Locates every query against `rfm`; with ground truth also writes the error summary,
/// and with a `reference` map a side-by-side comparison.
pub fn position(
    cfg: &PipelineConfig,
    run: &mut RunDir,
    rfm: &Rfm,
    queries: &[QueryRecord],
    reference: Option<&Rfm>,
) -> Result<Option<ErrorSummary>, CliError> {
    let estimates = locate_all(cfg, rfm, queries)?;
    let mut w = run.create_file("estimates.jsonl")?;
    for e in &estimates {
        serde_json::to_writer(&mut w, e)?;
        writeln!(w)?;
    }
    w.flush()?;
    let Some(summary) = score(&estimates, queries)? else {
        if reference.is_some() {
            return Err(CliError::Data("comparison needs queries with ground truth".into()));
        }
        return Ok(None);
    };
    run.write_json("summary.json", &summary)?;
    let mut w = run.create_file("ecdf.csv")?;
    write_ecdf_csv(&summary, &mut w)?;
    w.flush()?;
    info!(
        "k = {}: mean {:.2} m, CEP68 {:.2} m, CEP95 {:.2} m, floor accuracy {:.1}%",
        cfg.positioning.k,
        summary.mean,
        summary.cep68,
        summary.cep95,
        100.0 * summary.floor_accuracy
    );
    if let Some(reference) = reference {
        let ref_est = locate_all(cfg, reference, queries)?;
        let ref_summary = score(&ref_est, queries)?.expect("queries carry ground truth");
        run.write_json("summary-reference.json", &ref_summary)?;
        let mut w = run.create_file("ecdf-reference.csv")?;
        write_ecdf_csv(&ref_summary, &mut w)?;
        w.flush()?;
        let table = comparison_table(&ref_summary, &summary);
        let mut w = run.create_file("comparison.csv")?;
        w.write_all(table.as_bytes())?;
        w.flush()?;
        print!("{table}");
    }
    Ok(Some(summary))
}

pub fn mss_rfm(trajs: &[Trajectory], truth: &[Vec<Pose2D>]) -> Result<Rfm, CliError> {
    let at_truth = trajs
        .iter()
        .zip(truth)
        .map(|(t, p)| t.with_poses(p))
        .collect::<crowdmap::Result<Vec<_>>>()?;
    Ok(build_rfm(&at_truth))
}
