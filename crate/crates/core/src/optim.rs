use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{FeedForwardNet, ParamGrads};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// What to do with a gradient containing NaN or infinity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NonFinitePolicy {
    /// Refuse the update and return an error.
    #[default]
    Reject,
    /// Replace non-finite entries with zero and continue.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    #[serde(default)]
    pub clip_norm: Option<f64>,
    #[serde(default)]
    pub non_finite: NonFinitePolicy,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub epsilon: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            lr,
            clip_norm: None,
            non_finite: NonFinitePolicy::Reject,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_adam_eps(),
        }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerConfig { kind: OptimizerKind::Adam, ..OptimizerConfig::sgd(lr) }
    }

    pub fn with_clip(mut self, clip: f64) -> Self {
        self.clip_norm = Some(clip);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::config(format!("clip norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// Optimizer state for one network.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    step: u64,
    first_moment: Option<ParamGrads>,
    second_moment: Option<ParamGrads>,
}

/// Rescale `grads` in place so its norm is at most `max_norm`.
pub fn clip_norm(grads: &mut ParamGrads, max_norm: f64) {
    let norm = grads.norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer { config, step: 0, first_moment: None, second_moment: None }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn apply(&mut self, net: &mut FeedForwardNet, grads: &ParamGrads) -> Result<()> {
        let zero = ParamGrads::zeros_like(net);
        if !zero.same_layout(grads) {
            return Err(Error::Shape { expected: net.param_count(), actual: grads.iter().count() });
        }
        let mut g = grads.clone();
        if !g.is_finite() {
            match self.config.non_finite {
                NonFinitePolicy::Reject => return Err(Error::NonFinite("gradient")),
                NonFinitePolicy::Zero => g.iter_mut().filter(|x| !x.is_finite()).for_each(|x| *x = 0.0),
            }
        }
        if let Some(c) = self.config.clip_norm {
            clip_norm(&mut g, c);
        }
        self.step += 1;
        let lr = self.config.lr;
        match self.config.kind {
            OptimizerKind::Sgd => {
                net.params_mut().zip(g.iter()).for_each(|(p, g)| *p -= lr * g);
            }
            OptimizerKind::Adam => {
                let (b1, b2, eps) = (self.config.beta1, self.config.beta2, self.config.epsilon);
                let m = self.first_moment.get_or_insert_with(|| zero.clone());
                let v = self.second_moment.get_or_insert_with(|| zero.clone());
                let c1 = 1.0 - b1.powi(self.step as i32);
                let c2 = 1.0 - b2.powi(self.step as i32);
                for (((p, g), m), v) in net.params_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
        Ok(())
    }

    /// Keep moment buffers aligned with a network whose inputs were re-indexed.
    pub fn remap_inputs(&mut self, map: &[Option<usize>]) {
        for m in [&mut self.first_moment, &mut self.second_moment].into_iter().flatten() {
            m.remap_inputs(map);
        }
    }

    pub fn push_output(&mut self) {
        for m in [&mut self.first_moment, &mut self.second_moment].into_iter().flatten() {
            m.push_output();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Dense};
    use crate::rng::sub_stream;

    fn scalar(p: f64) -> FeedForwardNet {
        FeedForwardNet::from_layers(vec![Dense::new(vec![p], vec![0.0], 1, Activation::Identity).unwrap()]).unwrap()
    }

    fn grads_of(net: &FeedForwardNet, value: f64) -> ParamGrads {
        let mut g = ParamGrads::zeros_like(net);
        g.iter_mut().for_each(|x| *x = value);
        g
    }

    #[test]
    fn sgd_step() {
        let mut net = scalar(1.0);
        let mut g = ParamGrads::zeros_like(&net);
        g.layers[0].weights[0] = 1.0;
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1));
        opt.apply(&mut net, &g).unwrap();
        assert!((net.layers()[0].weights[0] - 0.9).abs() < 1e-15);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn clipping_caps_norm_at_limit() {
        let net = FeedForwardNet::random(&[3, 3], Activation::Identity, Activation::Identity, &mut sub_stream(0, 0)).unwrap();
        let mut g = grads_of(&net, 1.0);
        g.scale(10.0 / g.norm());
        clip_norm(&mut g, 1.0);
        assert!((g.norm() - 1.0).abs() < 1e-12);
        let mut small = grads_of(&net, 0.01);
        let before = small.norm();
        clip_norm(&mut small, 1.0);
        assert_eq!(small.norm(), before);
    }

    #[test]
    fn clipped_sgd_applies_unit_norm_update() {
        let mut net = scalar(0.0);
        let mut g = ParamGrads::zeros_like(&net);
        g.layers[0].weights[0] = 10.0;
        let mut opt = Optimizer::new(OptimizerConfig::sgd(1.0).with_clip(1.0));
        opt.apply(&mut net, &g).unwrap();
        assert!((net.layers()[0].weights[0] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut rng = sub_stream(4, 4);
        let base = FeedForwardNet::random(&[2, 4, 1], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        for cfg in [OptimizerConfig::sgd(0.5), OptimizerConfig::adam(0.5)] {
            let mut net = base.clone();
            let mut opt = Optimizer::new(cfg);
            for _ in 0..7 {
                opt.apply(&mut net, &ParamGrads::zeros_like(&base)).unwrap();
            }
            assert!(net.params().zip(base.params()).all(|(a, b)| a == b));
        }
    }

    #[test]
    fn non_finite_gradient_policy() {
        let mut net = scalar(1.0);
        let mut g = ParamGrads::zeros_like(&net);
        g.layers[0].weights[0] = f64::NAN;
        let mut reject = Optimizer::new(OptimizerConfig::sgd(0.1));
        assert!(matches!(reject.apply(&mut net, &g), Err(Error::NonFinite(_))));
        let mut zero = Optimizer::new(OptimizerConfig { non_finite: NonFinitePolicy::Zero, ..OptimizerConfig::sgd(0.1) });
        zero.apply(&mut net, &g).unwrap();
        assert_eq!(net.layers()[0].weights[0], 1.0);
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut net = scalar(1.0);
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.01));
        let g = grads_of(&net, 2.0);
        opt.apply(&mut net, &g).unwrap();
        // first bias-corrected Adam step has magnitude lr
        assert!((net.layers()[0].weights[0] - 0.99).abs() < 1e-9);
    }
}
