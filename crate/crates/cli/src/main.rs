mod commands;
mod config;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use crowdmap::geomodel::ZetaMethod;
use crowdmap::io::{read_truth, truth_for};

use commands::*;
use config::PipelineConfig;
use error::CliError;
use run::RunDir;

#[derive(Parser)]
#[command(name = "crowdmap", version, about = "Radio maps from crowd-sourced trajectories")]
struct Cli {
    /// TOML configuration; missing sections use the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log progress (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Mle,
    Kde,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic venue: traces, ground truth and positioning queries.
    Simulate {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trajectories: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        floors: Option<usize>,
    },
    /// Learn the similarity-to-distance model from traces.
    FitModel {
        #[arg(long)]
        traces: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        method: Option<Method>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fuse traces into a common frame and build the radio map.
    Fuse {
        #[arg(long)]
        traces: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Ground truth, for ATE in the summary and the sweep.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Also fuse at thresholds 0.05, 0.15, ..., 0.95 and write sweep.csv.
        #[arg(long)]
        sweep: bool,
    },
    /// Locate queries against a radio map.
    Position {
        #[arg(long)]
        rfm: Option<PathBuf>,
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(short, long)]
        k: Option<usize>,
        #[arg(long)]
        weighted: bool,
        /// Second map (e.g. surveyed at true positions) to compare against.
        #[arg(long)]
        reference_rfm: Option<PathBuf>,
    },
    /// Align fused trajectories to ground truth: ATE and a radio map in the truth frame.
    Evaluate {
        #[arg(long)]
        traces: Option<PathBuf>,
        #[arg(long)]
        fused: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// simulate, fit-model, fuse, evaluate and position in one run directory.
    Pipeline {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        sweep: bool,
    },
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| CliError::Config(format!("no {name} given (flag or [paths] entry)")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = PipelineConfig::load(cli.config.as_deref())?;
    let paths = cfg.paths.clone();
    let out_dir = |flag: Option<PathBuf>| required(flag, &paths.out, "output directory");
    match cli.command {
        Command::Simulate { out, seed, trajectories, steps, floors } => {
            let s = &mut cfg.simulator;
            s.seed = seed.unwrap_or(s.seed);
            s.walk.n_traj = trajectories.unwrap_or(s.walk.n_traj);
            s.walk.steps = steps.unwrap_or(s.walk.steps);
            s.floors = floors.unwrap_or(s.floors);
            cfg.validate()?;
            let mut run = RunDir::create(&out_dir(out)?, "simulate", &cfg)?;
            simulate(&cfg, &mut run)?;
            run.finish(&cfg)
        }
        Command::FitModel { traces, out, method, seed } => {
            if let Some(m) = method {
                cfg.geomodel.method = match m {
                    Method::Mle => ZetaMethod::Mle,
                    Method::Kde => ZetaMethod::Kde,
                };
            }
            cfg.geomodel.seed = seed.unwrap_or(cfg.geomodel.seed);
            cfg.validate()?;
            let mut run = RunDir::create(&out_dir(out)?, "fit-model", &cfg)?;
            let trajs = load_traces(&mut run, &required(traces, &paths.traces, "traces")?)?;
            fit_model(&cfg, &mut run, &trajs)?;
            run.finish(&cfg)
        }
        Command::Fuse { traces, model, out, truth, threshold, sweep } => {
            cfg.fusion.closure.threshold = threshold.unwrap_or(cfg.fusion.closure.threshold);
            cfg.validate()?;
            let mut run = RunDir::create(&out_dir(out)?, "fuse", &cfg)?;
            let trajs = load_traces(&mut run, &required(traces, &paths.traces, "traces")?)?;
            let model = load_model(&mut run, &required(model, &paths.model, "model")?)?;
            let truth = match truth.or(paths.truth.clone()) {
                Some(p) => Some(load_poses(&mut run, &p, &trajs)?),
                None => None,
            };
            fuse_traces(&cfg, &mut run, &trajs, &model, truth.as_deref(), sweep)?;
            run.finish(&cfg)
        }
        Command::Position { rfm, queries, out, k, weighted, reference_rfm } => {
            cfg.positioning.k = k.unwrap_or(cfg.positioning.k);
            cfg.positioning.weighted |= weighted;
            cfg.validate()?;
            let mut run = RunDir::create(&out_dir(out)?, "position", &cfg)?;
            let map = load_rfm(&mut run, &required(rfm, &paths.rfm, "radio map")?)?;
            let queries = load_queries(&mut run, &required(queries, &paths.queries, "queries")?)?;
            let reference = reference_rfm.map(|p| load_rfm(&mut run, &p)).transpose()?;
            position(&cfg, &mut run, &map, &queries, reference.as_ref())?;
            run.finish(&cfg)
        }
        Command::Evaluate { traces, fused, truth, out } => {
            cfg.validate()?;
            let mut run = RunDir::create(&out_dir(out)?, "evaluate", &cfg)?;
            let trajs = load_traces(&mut run, &required(traces, &paths.traces, "traces")?)?;
            let poses = load_poses(&mut run, &fused, &trajs)?;
            let fused_trajs = trajs
                .iter()
                .zip(&poses)
                .map(|(t, p)| t.with_poses(p))
                .collect::<crowdmap::Result<Vec<_>>>()?;
            let truth = load_poses(&mut run, &required(truth, &paths.truth, "ground truth")?, &trajs)?;
            evaluate_fusion(&mut run, &fused_trajs, &truth)?;
            run.finish(&cfg)
        }
        Command::Pipeline { out, seed, sweep } => {
            cfg.simulator.seed = seed.unwrap_or(cfg.simulator.seed);
            cfg.validate()?;
            let mut run = RunDir::create(&out_dir(out)?, "pipeline", &cfg)?;
            pipeline(&cfg, &mut run, sweep)?;
            run.finish(&cfg)
        }
    }
}

fn pipeline(cfg: &PipelineConfig, run: &mut RunDir, sweep: bool) -> Result<(), CliError> {
    let queries = simulate(cfg, run)?;
    // later stages read the files back so the run matches a stage-by-stage one
    let dir = run.path().to_path_buf();
    let trajs = load_traces(run, &dir.join("traces.jsonl"))?;
    let truth = truth_for(&trajs, &read_truth(std::fs::read(dir.join("truth.jsonl"))?.as_slice())?)?;
    let model = fit_model(cfg, run, &trajs)?;
    let fused = fuse_traces(cfg, run, &trajs, &model, Some(&truth), sweep)?;
    let (_, aligned) = evaluate_fusion(run, &fused.trajectories, &truth)?;
    let mss = mss_rfm(&trajs, &truth)?;
    let mut w = run.create_file("rfm-mss.jsonl")?;
    mss.write_jsonl(&mut w)?;
    std::io::Write::flush(&mut w)?;
    let ccs = crowdmap::positioning::build_rfm(&aligned);
    position(cfg, run, &ccs, &queries, Some(&mss))?;
    Ok(())
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("crowdmap: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
