//! Supervised pretraining of the Experiment 1 PUs on oracle labels.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::envs::exp1::{exp1_nets, exp1_pretrain_targets, Exp1Labels};
use crate::error::{Error, Result};
use crate::nn::{mse_loss, FeedForwardNet};
use crate::optim::Optimizer;
use crate::rng::{stream, sub_stream, Rng, Stream};

use super::config::{ExperimentId, PretrainConfig, RunConfig};
use super::metrics::PretrainStatus;

pub const EXP1_PU_NAMES: [&str; 3] = ["compare", "double", "half"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamFile {
    pub experiment: ExperimentId,
    pub seed: u64,
    pub nets: BTreeMap<String, FeedForwardNet>,
    pub status: PretrainStatus,
}

impl ParamFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    /// The three Experiment 1 nets in layout order.
    pub fn exp1_nets(&self) -> Result<[FeedForwardNet; 3]> {
        let get = |name: &str| {
            self.nets.get(name).cloned().ok_or_else(|| Error::config(format!("parameter file has no net named {name:?}")))
        };
        Ok([get(EXP1_PU_NAMES[0])?, get(EXP1_PU_NAMES[1])?, get(EXP1_PU_NAMES[2])?])
    }
}

fn sample(rng: &mut Rng) -> (f64, f64) {
    (rng.gen::<f64>(), rng.gen::<f64>())
}

fn example(which: usize, a: f64, b: f64) -> (Vec<f64>, f64) {
    let Exp1Labels { compare, double, half } = exp1_pretrain_targets(a, b);
    match which {
        0 => (vec![a, b], compare),
        1 => (vec![a], double),
        _ => (vec![b], half),
    }
}

fn eval_mse(net: &FeedForwardNet, which: usize, set: &[(f64, f64)]) -> Result<f64> {
    let mut total = 0.0;
    for &(a, b) in set {
        let (x, y) = example(which, a, b);
        total += mse_loss(&net.predict(&x)?, &[y])?.0;
    }
    Ok(total / set.len() as f64)
}

/// Train one net until its held-out mse is below the threshold or the budget
/// runs out. Returns (held-out mse, samples used).
pub fn train_to_threshold(net: &mut FeedForwardNet, which: usize, cfg: &PretrainConfig, seed: u64) -> Result<(f64, u64)> {
    let mut rng = sub_stream(seed, Stream::Pretrain as u64 * 100 + which as u64);
    let mut eval_rng = sub_stream(seed, Stream::Pretrain as u64 * 100 + 50);
    let held_out: Vec<(f64, f64)> = (0..cfg.eval_samples).map(|_| sample(&mut eval_rng)).collect();
    let mut opt = Optimizer::new(cfg.optimizer.clone());
    let mut mse = eval_mse(net, which, &held_out)?;
    let mut used = 0;
    while mse >= cfg.threshold && used < cfg.budget {
        let (a, b) = sample(&mut rng);
        let (x, y) = example(which, a, b);
        let (out, trace) = net.forward(&x)?;
        let (_, grad) = mse_loss(&out, &[y])?;
        let (_, grads) = net.backward(&trace, &grad)?;
        opt.apply(net, &grads)?;
        used += 1;
        if used % cfg.eval_every == 0 || used == cfg.budget {
            mse = eval_mse(net, which, &held_out)?;
        }
    }
    Ok((mse, used))
}

/// Pretrain the Experiment 1 PUs starting from the same initial nets a run
/// with this config would use.
pub fn pretrain_exp1(config: &RunConfig) -> Result<ParamFile> {
    if config.experiment != ExperimentId::Exp1 {
        return Err(Error::config("pretraining is only defined for exp1"));
    }
    let mut nets = exp1_nets(&config.pu, &mut stream(config.seed, Stream::PuInit))?;
    let mut status = PretrainStatus { converged: true, mse: BTreeMap::new(), samples: BTreeMap::new(), loaded_from: None };
    for (which, net) in nets.iter_mut().enumerate() {
        let (mse, used) = train_to_threshold(net, which, &config.pretrain, config.seed)?;
        let name = EXP1_PU_NAMES[which].to_string();
        if mse >= config.pretrain.threshold {
            log::warn!("pretraining {name} stopped at mse {mse:.3e} after {used} samples");
            status.converged = false;
        }
        status.mse.insert(name.clone(), mse);
        status.samples.insert(name, used);
    }
    let named = EXP1_PU_NAMES.iter().map(|s| s.to_string()).zip(nets).collect();
    Ok(ParamFile { experiment: ExperimentId::Exp1, seed: config.seed, nets: named, status })
}
