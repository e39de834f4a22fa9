//! Building and running configured experiments.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use crate::envs::exp1::{build_exp1_graph, exp1_nets, Exp1Env, Exp1Variant};
use crate::envs::exp2::{build_exp2_graph, exp2_nets, Exp2Env};
use crate::envs::fixtures::{build_fixture_graph, FixtureTask};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::network::{InteractionNetwork, IterationOutcome, NetworkParts};
use crate::rng::{stream, Stream};
use crate::snapshot::Snapshot;

use super::config::{ExperimentId, RunConfig};
use super::metrics::{Header, MetricsTracker, MetricsWriter, PretrainStatus, Record, Summary, WindowRecord};
use super::pretrain::{pretrain_exp1, ParamFile};

/// A configured network plus its metrics bookkeeping.
#[derive(Debug)]
pub struct Experiment {
    config: RunConfig,
    net: InteractionNetwork,
    tracker: MetricsTracker,
    pretrain: Option<PretrainStatus>,
}

impl Experiment {
    pub fn build(config: RunConfig) -> Result<Self> {
        let config = config.resolve()?;
        let seed = config.seed;
        let mut pretrain = None;
        let (graph, envs): (_, Vec<Box<dyn Environment>>) = match config.experiment {
            ExperimentId::Exp1 => {
                let nets = if config.variant == Exp1Variant::PretrainedPus {
                    let file = match &config.pretrain.params {
                        Some(path) => {
                            let mut f = ParamFile::load(path)?;
                            f.status.loaded_from = Some(path.display().to_string());
                            f
                        }
                        None => pretrain_exp1(&config)?,
                    };
                    pretrain = Some(file.status.clone());
                    file.exp1_nets()?
                } else {
                    exp1_nets(&config.pu, &mut stream(seed, Stream::PuInit))?
                };
                let (graph, layout) = build_exp1_graph(config.variant, nets, &config.pu, config.tape.clone())?;
                let env = Exp1Env::new(config.exp1.clone(), config.variant, layout, stream(seed, Stream::Environment));
                (graph, vec![Box::new(env) as Box<dyn Environment>])
            }
            ExperimentId::Exp2 => {
                let nets = exp2_nets(&config.pu, &mut stream(seed, Stream::PuInit))?;
                let (graph, layout) = build_exp2_graph(nets, &config.pu, config.tape.clone())?;
                let env = Exp2Env::new(config.exp2.clone(), layout, stream(seed, Stream::Environment))?;
                (graph, vec![Box::new(env) as Box<dyn Environment>])
            }
            ExperimentId::Fixture => {
                let (graph, layout) = build_fixture_graph(&config.fixture, config.fixture.student(seed)?, config.tape.clone())?;
                let task = FixtureTask::new(config.fixture.clone(), layout, seed)?;
                (graph, vec![Box::new(task) as Box<dyn Environment>])
            }
        };
        let parts = NetworkParts {
            graph,
            envs,
            cu: config.cu.clone(),
            tape: config.tape.clone(),
            runtime: config.runtime.clone(),
            wheels: config.wheels,
        };
        let net = InteractionNetwork::new(parts, stream(seed, Stream::ControlUnit))?;
        let tracker = MetricsTracker::new(config.metrics.window, config.metrics.reward_threshold);
        Ok(Experiment { config, net, tracker, pretrain })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn network(&self) -> &InteractionNetwork {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut InteractionNetwork {
        &mut self.net
    }

    pub fn header(&self) -> Header {
        Header {
            config: self.config.clone(),
            catalog: self.net.catalog().iter().map(ToString::to_string).collect(),
            pretrain: self.pretrain.clone(),
        }
    }

    /// One iteration; also returns the window record if a window closed.
    pub fn step(&mut self) -> Result<(IterationOutcome, Option<WindowRecord>)> {
        let out = self.net.step()?;
        let rec = self.tracker.observe(&self.net, &out);
        Ok((out, rec))
    }

    pub fn summary(&self, stopped_early: bool) -> Summary {
        self.tracker.summary(&self.net, stopped_early)
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub header: Header,
    pub windows: Vec<WindowRecord>,
    pub summary: Summary,
    pub snapshots: Vec<PathBuf>,
}

/// Run a config to its iteration budget, streaming metrics to `metrics`.
/// `stop` sees every window record and may end the run early. Snapshots go
/// to `snapshot_dir` when one is given.
pub fn run_experiment<W, F>(config: RunConfig, metrics: W, snapshot_dir: Option<&Path>, mut stop: F) -> Result<RunReport>
where
    W: Write,
    F: FnMut(&InteractionNetwork, &WindowRecord) -> ControlFlow<()>,
{
    let mut exp = Experiment::build(config)?;
    let mut writer = MetricsWriter::new(metrics);
    let header = exp.header();
    writer.write(&Record::Header(Box::new(header.clone())))?;
    let snap = exp.config.snapshot.clone();
    let snap_dir = if snap.enabled { snapshot_dir } else { None };
    if let Some(dir) = snap_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut windows = Vec::new();
    let mut snapshots = Vec::new();
    let mut stopped_early = false;
    for _ in 0..exp.config.iterations {
        let (_, rec) = exp.step()?;
        if let Some(dir) = snap_dir {
            if exp.net.iteration() % snap.every == 0 {
                snapshots.push(Snapshot::capture(&exp.net)?.save(dir)?);
            }
        }
        if let Some(rec) = rec {
            writer.write(&Record::Window(rec.clone()))?;
            let flow = stop(&exp.net, &rec);
            windows.push(rec);
            if flow.is_break() {
                stopped_early = exp.net.iteration() < exp.config.iterations;
                break;
            }
        }
    }
    if let Some(dir) = snap_dir {
        let s = Snapshot::capture(&exp.net)?;
        if snapshots.last().map_or(true, |p| p.file_name() != Some(s.file_name().as_ref())) {
            snapshots.push(s.save(dir)?);
        }
    }
    let summary = exp.summary(stopped_early);
    writer.write(&Record::Summary(summary.clone()))?;
    writer.flush()?;
    Ok(RunReport { header, windows, summary, snapshots })
}

/// Run into `out_dir`: `metrics.jsonl` plus a `snapshots` directory.
pub fn run_to_dir(config: RunConfig, out_dir: &Path) -> Result<RunReport> {
    std::fs::create_dir_all(out_dir)?;
    let file = File::create(out_dir.join("metrics.jsonl"))?;
    run_experiment(config, BufWriter::new(file), Some(&out_dir.join("snapshots")), |_, _| ControlFlow::Continue(()))
}

/// One thread per config, each writing to `out_dir/seed_<seed>`.
pub fn run_sweep(configs: Vec<RunConfig>, out_dir: &Path) -> Vec<Result<RunReport>> {
    let mut seeds: Vec<u64> = configs.iter().map(|c| c.seed).collect();
    seeds.sort_unstable();
    if seeds.windows(2).any(|w| w[0] == w[1]) {
        return configs.iter().map(|_| Err(Error::config("sweep seeds must be distinct"))).collect();
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .into_iter()
            .map(|cfg| {
                let dir = out_dir.join(format!("seed_{}", cfg.seed));
                s.spawn(move || run_to_dir(cfg, &dir))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Environment("sweep worker panicked".into()))))
            .collect()
    })
}
