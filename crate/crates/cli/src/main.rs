//! `innet`: run experiments, pretrain PUs, plot metrics, inspect snapshots.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use innet_core::harness::metrics::read_records;
use innet_core::harness::plot::render_svg;
use innet_core::harness::pretrain::pretrain_exp1;
use innet_core::harness::{run_sweep, run_to_dir, RunConfig};
use innet_core::snapshot::Snapshot;
use innet_core::Error;

#[derive(Parser, Debug)]
#[command(name = "innet", version, about = "Interaction Network experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an experiment. Several --seed flags run one thread per seed.
    Run(RunArgs),
    /// Pretrain the Experiment 1 PUs and save their parameters.
    Pretrain(RunArgs),
    /// Render a metrics stream as SVG.
    Plot {
        metrics: PathBuf,
        /// Defaults to the metrics path with an .svg extension.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a snapshot summary.
    InspectSnapshot {
        path: PathBuf,
        /// Print the whole snapshot as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Vec<u64>,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
    /// Dotted key=value, e.g. cu.gamma=0.8. Repeatable.
    #[arg(long = "override")]
    overrides: Vec<String>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load_config(args: &RunArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?,
        None => RunConfig::default(),
    };
    for o in &args.overrides {
        cfg.apply_override(o).map_err(|e| Failure::Config(e.to_string()))?;
    }
    if let Some(n) = args.iters {
        cfg.iterations = n;
    }
    if let Some(&s) = args.seed.first() {
        cfg.seed = s;
    }
    cfg.clone().resolve().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(cfg)
}

fn run(args: &RunArgs) -> Result<(), Failure> {
    let cfg = load_config(args)?;
    if args.seed.len() > 1 {
        let configs = args.seed.iter().map(|&s| RunConfig { seed: s, ..cfg.clone() }).collect();
        let mut failed = None;
        for (seed, res) in args.seed.iter().zip(run_sweep(configs, &args.out_dir)) {
            match res {
                Ok(r) => println!("seed {seed}: {}", serde_json::to_string(&r.summary).unwrap_or_default()),
                Err(e) => {
                    eprintln!("seed {seed}: {e}");
                    failed = Some(Failure::from(e));
                }
            }
        }
        return failed.map_or(Ok(()), Err);
    }
    let report = run_to_dir(cfg, &args.out_dir)?;
    println!("{}", serde_json::to_string(&report.summary).unwrap_or_default());
    println!("metrics: {}", args.out_dir.join("metrics.jsonl").display());
    Ok(())
}

fn pretrain(args: &RunArgs) -> Result<(), Failure> {
    let cfg = load_config(args)?;
    let file = pretrain_exp1(&cfg)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Failure::Runtime(e.to_string()))?;
    let path = args.out_dir.join("params.json");
    file.save(&path)?;
    println!("converged: {}", file.status.converged);
    for (name, mse) in &file.status.mse {
        println!("{name}: mse {mse:.3e} after {} samples", file.status.samples[name]);
    }
    println!("params: {}", path.display());
    Ok(())
}

fn plot(metrics: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let f = File::open(metrics).map_err(|e| Failure::Config(format!("{}: {e}", metrics.display())))?;
    let records = read_records(BufReader::new(f))?;
    let out = out.map_or_else(|| metrics.with_extension("svg"), Path::to_path_buf);
    std::fs::write(&out, render_svg(&records)).map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("plot: {}", out.display());
    Ok(())
}

fn inspect(path: &Path, json: bool) -> Result<(), Failure> {
    let s = Snapshot::load(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    if json {
        println!("{}", serde_json::to_string_pretty(&s).map_err(|e| Failure::Runtime(e.to_string()))?);
        return Ok(());
    }
    println!("iteration {}", s.iteration);
    println!("last action {}", s.last_action.map_or("-".to_string(), |a| a.to_string()));
    for n in &s.nodes {
        println!("node {} {:<10} {:?} {:?}", n.id, n.name, n.kind, n.values);
    }
    for q in &s.q_values {
        println!("q {:<8} {:.4}", q.action.to_string(), q.q);
    }
    for (pu, sum) in &s.checksums {
        println!("checksum {pu} {sum}");
    }
    for e in &s.environments {
        println!("env {} {} {}", e.id, e.name, e.status);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Run(a) => run(a),
        Command::Pretrain(a) => pretrain(a),
        Command::Plot { metrics, out } => plot(metrics, out.as_deref()),
        Command::InspectSnapshot { path, json } => inspect(path, *json),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
