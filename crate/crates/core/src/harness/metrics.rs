//! Line-delimited JSON metrics: a header with the resolved config, one record
//! per window, and a closing summary.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::env::EnvEvent;
use crate::error::{Error, Result};
use crate::network::{InteractionNetwork, IterationOutcome};

use super::config::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub config: RunConfig,
    pub catalog: Vec<String>,
    pub pretrain: Option<PretrainStatus>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainStatus {
    pub converged: bool,
    /// Held-out mse per PU name.
    pub mse: BTreeMap<String, f64>,
    pub samples: BTreeMap<String, u64>,
    pub loaded_from: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    /// Iterations completed at the end of the window.
    pub iteration: u64,
    pub len: u64,
    pub mean_reward: f64,
    pub mean_env_reward: f64,
    pub epsilon: f64,
    pub actions: BTreeMap<String, u64>,
    pub episodes: u64,
    pub successes: u64,
    pub success_rate: Option<f64>,
    /// Episodes where the greedy choice matched the script at every step.
    pub optimal_episodes: u64,
    pub optimal_rate: Option<f64>,
    /// Episodes that ended on their first step.
    pub single_step_episodes: u64,
    /// Fraction of scripted iterations where the greedy choice matched the script.
    pub script_follow: Option<f64>,
    pub wheels: bool,
    pub required_len: Option<usize>,
    pub max_solved: Option<usize>,
    /// Mean per-update gradient norm per PU.
    pub grad_norms: BTreeMap<String, f64>,
    pub cu_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub iterations: u64,
    pub stopped_early: bool,
    pub peak_windowed_reward: Option<f64>,
    pub reward_threshold: f64,
    /// End of the first window whose mean reward reached the threshold.
    pub iterations_to_threshold: Option<u64>,
    pub max_len_reached: Option<usize>,
    pub episodes: u64,
    pub successes: u64,
    pub checksums: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Record {
    Header(Box<Header>),
    Window(WindowRecord),
    Summary(Summary),
}

pub struct MetricsWriter<W: Write> {
    out: W,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(out: W) -> Self {
        MetricsWriter { out }
    }

    pub fn write(&mut self, record: &Record) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

pub fn read_records<R: BufRead>(input: R) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Config(format!("metrics line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Default)]
struct Window {
    len: u64,
    reward: f64,
    env_reward: f64,
    actions: BTreeMap<String, u64>,
    episodes: u64,
    successes: u64,
    optimal: u64,
    single: u64,
    scripted: u64,
    followed: u64,
    wheels: bool,
    grads: BTreeMap<String, (f64, u64)>,
    loss: (f64, u64),
}

/// Turns iteration outcomes into window records.
#[derive(Debug)]
pub struct MetricsTracker {
    window: u64,
    threshold: f64,
    cur: Window,
    episode_steps: u64,
    episode_on_script: bool,
    peak: Option<f64>,
    first_hit: Option<u64>,
    max_len: Option<usize>,
    episodes: u64,
    successes: u64,
}

impl MetricsTracker {
    pub fn new(window: u64, threshold: f64) -> Self {
        MetricsTracker {
            window: window.max(1),
            threshold,
            cur: Window::default(),
            episode_steps: 0,
            episode_on_script: true,
            peak: None,
            first_hit: None,
            max_len: None,
            episodes: 0,
            successes: 0,
        }
    }

    /// Record one iteration; returns a record when a window closes.
    pub fn observe(&mut self, net: &InteractionNetwork, out: &IterationOutcome) -> Option<WindowRecord> {
        let w = &mut self.cur;
        w.len += 1;
        w.reward += out.reward;
        w.env_reward += out.env_reward;
        *w.actions.entry(out.action.to_string()).or_default() += 1;
        w.wheels |= out.wheels;
        if let Some(s) = out.script {
            w.scripted += 1;
            if s == out.argmax {
                w.followed += 1;
            } else {
                self.episode_on_script = false;
            }
        }
        for g in &out.gradients {
            for (pu, n) in &g.pu_norms {
                let e = w.grads.entry(pu.to_string()).or_default();
                e.0 += n;
                e.1 += 1;
            }
        }
        if let Some(l) = out.cu_loss {
            w.loss.0 += l;
            w.loss.1 += 1;
        }
        let successes = out.events.iter().filter(|(_, e)| *e == EnvEvent::Succeeded).count() as u64;
        w.successes += successes;
        self.successes += successes;
        self.episode_steps += 1;
        if out.episode_end {
            w.episodes += 1;
            self.episodes += 1;
            if self.episode_steps == 1 {
                w.single += 1;
            }
            if self.episode_on_script {
                w.optimal += 1;
            }
            self.episode_steps = 0;
            self.episode_on_script = true;
        }
        let progress = net.envs().find_map(|(_, e)| e.progress());
        if let Some(p) = progress {
            self.max_len = Some(self.max_len.unwrap_or(0).max(p.max_solved));
        }
        if net.iteration() % self.window != 0 {
            return None;
        }
        let w = std::mem::take(&mut self.cur);
        let len = w.len as f64;
        let mean_reward = w.reward / len;
        if self.peak.map_or(true, |p| mean_reward > p) {
            self.peak = Some(mean_reward);
        }
        if self.first_hit.is_none() && mean_reward >= self.threshold {
            self.first_hit = Some(net.iteration());
        }
        let rate = |k: u64| if w.episodes == 0 { None } else { Some(k as f64 / w.episodes as f64) };
        Some(WindowRecord {
            iteration: net.iteration(),
            len: w.len,
            mean_reward,
            mean_env_reward: w.env_reward / len,
            epsilon: out.epsilon,
            success_rate: rate(w.successes),
            optimal_rate: rate(w.optimal),
            actions: w.actions,
            episodes: w.episodes,
            successes: w.successes,
            optimal_episodes: w.optimal,
            single_step_episodes: w.single,
            script_follow: if w.scripted == 0 { None } else { Some(w.followed as f64 / w.scripted as f64) },
            wheels: w.wheels,
            required_len: progress.map(|p| p.required_len),
            max_solved: progress.map(|p| p.max_solved),
            grad_norms: w.grads.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect(),
            cu_loss: if w.loss.1 == 0 { None } else { Some(w.loss.0 / w.loss.1 as f64) },
        })
    }

    pub fn summary(&self, net: &InteractionNetwork, stopped_early: bool) -> Summary {
        Summary {
            iterations: net.iteration(),
            stopped_early,
            peak_windowed_reward: self.peak,
            reward_threshold: self.threshold,
            iterations_to_threshold: self.first_hit,
            max_len_reached: self.max_len,
            episodes: self.episodes,
            successes: self.successes,
            checksums: net.graph().pus().map(|(id, pu)| (id.to_string(), pu.checksum())).collect(),
        }
    }
}
