//! Oracles and the deterministic acceptance checks, shared by the test targets.
#![allow(dead_code)]

use std::ops::ControlFlow;

use innet_core::control::{ControlUnit, CuConfig, FeatureKey, StateLayout, TrainingWheels, Transition, WheelsMode};
use innet_core::env::Environment;
use innet_core::envs::exp1::{build_exp1_graph, Exp1Config, Exp1Env, Exp1Variant};
use innet_core::envs::exp2::{build_exp2_graph, exp2_oracle_nets, Exp2Config, Exp2Env, Reductor};
use innet_core::envs::fixtures::{fixture_network, FixtureConfig, FixtureKind, SampleStream};
use innet_core::envs::PuConfig;
use innet_core::graph::{ActionId, EnvId, Graph, NodeId, NodeSpec, PuId, PuSpec};
use innet_core::harness::{run_experiment, ExperimentId, RunConfig};
use innet_core::network::{InteractionNetwork, NetworkParts, RuntimeConfig};
use innet_core::nn::{mse_loss, Activation, Dense, FeedForwardNet, ParamGrads};
use innet_core::optim::{Optimizer, OptimizerConfig};
use innet_core::rng::{stream, sub_stream, Rng, Stream};
use innet_core::tape::{backprop_from_node, TapeConfig};
use innet_core::tensor::Tensor;
use rand::Rng as _;

pub const ACTIVATIONS: [Activation; 4] = [Activation::Identity, Activation::Relu, Activation::Tanh, Activation::Sigmoid];

pub fn close(x: f64, y: f64, rel: f64, floor: f64) -> bool {
    let diff = (x - y).abs();
    diff <= floor || diff <= rel * x.abs().max(y.abs())
}

/// Largest elementwise relative error, with `floor` guarding near-zero pairs.
pub fn max_rel_err<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>, floor: f64) -> f64 {
    a.into_iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor)).fold(0.0, f64::max)
}

/// Central-difference estimate of d loss(net(input)) / d params.
pub fn finite_diff_grads(net: &FeedForwardNet, input: &[f64], loss: impl Fn(&[f64]) -> f64, eps: f64) -> Vec<f64> {
    let n = net.param_count();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut probe = net.clone();
        let p = probe.params_mut().nth(k).expect("param index");
        let orig = *p;
        *p = orig + eps;
        let up = loss(&probe.predict(input).expect("input length"));
        let mut probe = net.clone();
        *probe.params_mut().nth(k).expect("param index") = orig - eps;
        let down = loss(&probe.predict(input).expect("input length"));
        out.push((up - down) / (2.0 * eps));
    }
    out
}

pub fn linear(weights: Vec<f64>, bias: Vec<f64>, in_dim: usize) -> FeedForwardNet {
    FeedForwardNet::from_layers(vec![Dense::new(weights, bias, in_dim, Activation::Identity).unwrap()]).unwrap()
}

pub fn random_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// A network whose CU is switched off and whose script drives every step.
pub fn scripted_network(graph: Graph, envs: Vec<Box<dyn Environment>>, tape: TapeConfig, seed: u64) -> InteractionNetwork {
    let parts = NetworkParts {
        graph,
        envs,
        cu: CuConfig { train: false, ..CuConfig::default() },
        tape,
        runtime: RuntimeConfig::default(),
        wheels: TrainingWheels { enabled: true, mode: WheelsMode::Drive, active_until: u64::MAX, reward: 1.0 },
    };
    InteractionNetwork::new(parts, stream(seed, Stream::ControlUnit)).unwrap()
}

pub type Check = Result<String, String>;

/// Criterion 1: backward against central differences on random nets.
pub fn check_gradient_oracle() -> Check {
    let mut cases = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..24u64 {
        let mut rng = sub_stream(seed, 900);
        let depth = 1 + (seed as usize % 3);
        let hidden = ACTIVATIONS[seed as usize % 4];
        let output = ACTIVATIONS[(seed as usize / 4) % 4];
        let mut dims = vec![rng.gen_range(1..5)];
        for _ in 0..depth {
            dims.push(rng.gen_range(1..6));
        }
        let net = FeedForwardNet::random(&dims, hidden, output, &mut rng).map_err(|e| e.to_string())?;
        let x = random_vec(&mut rng, dims[0]);
        let og = random_vec(&mut rng, *dims.last().unwrap());
        let (_, trace) = net.forward(&x).map_err(|e| e.to_string())?;
        let (_, g) = net.backward(&trace, &og).map_err(|e| e.to_string())?;
        let fd = finite_diff_grads(&net, &x, |y| y.iter().zip(&og).map(|(a, b)| a * b).sum(), 1e-6);
        let err = max_rel_err(g.iter(), fd.iter(), 1e-6);
        if err >= 1e-4 {
            return Err(format!("case {seed} ({depth} layers, {hidden:?}/{output:?}): relative error {err:.2e}"));
        }
        worst = worst.max(err);
        cases += 1;
    }
    Ok(format!("{cases} cases, worst relative error {worst:.2e}"))
}

/// Parameter gradients of a chain of nets applied in order, by plain backprop.
pub fn composed_grads(nets: &[FeedForwardNet], x: &[f64], out_grad: &[f64]) -> Vec<ParamGrads> {
    let mut traces = Vec::new();
    let mut cur = x.to_vec();
    for n in nets {
        let (y, t) = n.forward(&cur).unwrap();
        traces.push(t);
        cur = y;
    }
    let mut g = out_grad.to_vec();
    let mut grads = vec![None; nets.len()];
    for (i, n) in nets.iter().enumerate().rev() {
        let (ig, pg) = n.backward(&traces[i], &g).unwrap();
        grads[i] = Some(pg);
        g = ig;
    }
    grads.into_iter().map(Option::unwrap).collect()
}

/// Criterion 2: tape backprop against composed-network backprop.
pub fn check_tape_composition() -> Check {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for k in 1..=4usize {
        for horizon in 1..=5usize {
            let mut rng = sub_stream((k * 10 + horizon) as u64, 901);
            let dims: Vec<usize> = (0..=k).map(|_| rng.gen_range(1..4)).collect();
            let nets: Vec<FeedForwardNet> = (0..k)
                .map(|i| FeedForwardNet::random(&[dims[i], 4, dims[i + 1]], Activation::Tanh, Activation::Identity, &mut rng).unwrap())
                .collect();
            let cfg = TapeConfig { capacity: 64, horizon, ..TapeConfig::default() };
            let mut g = Graph::new(cfg).map_err(|e| e.to_string())?;
            let nodes: Vec<NodeId> = dims.iter().enumerate().map(|(i, d)| g.add_node(NodeSpec::slot(&format!("n{i}"), *d)).unwrap()).collect();
            let pus: Vec<PuId> = (0..k)
                .map(|i| g.add_pu(PuSpec::new(&format!("p{i}"), nets[i].clone(), vec![nodes[i]], vec![nodes[i + 1]], OptimizerConfig::sgd(0.1))).unwrap())
                .collect();
            let x = random_vec(&mut rng, dims[0]);
            let og = random_vec(&mut rng, dims[k]);
            g.write_node(nodes[0], Tensor::vector(x.clone()).unwrap()).unwrap();
            for p in &pus {
                g.execute_pu(*p, false).unwrap();
            }
            let bp = backprop_from_node(&g, nodes[k], &og, horizon).map_err(|e| e.to_string())?;
            let expect = composed_grads(&nets, &x, &og);
            let reach = k.min(horizon);
            if bp.visited.len() != reach || bp.max_depth != reach {
                return Err(format!("k={k} H={horizon}: visited {} stages, expected {reach}", bp.visited.len()));
            }
            for (i, p) in pus.iter().enumerate() {
                match bp.grads.get(p) {
                    Some(got) if i >= k - reach => {
                        let err = max_rel_err(got.iter(), expect[i].iter(), 1e-12);
                        if err >= 1e-6 {
                            return Err(format!("k={k} H={horizon} stage {i}: relative error {err:.2e}"));
                        }
                        worst = worst.max(err);
                    }
                    None if i < k - reach => {}
                    _ => return Err(format!("k={k} H={horizon}: stage {i} reached wrongly")),
                }
            }
            checked += 1;
        }
    }
    // One PU applied repeatedly to its own output: gradients accumulate across uses.
    for k in 1..=4usize {
        let mut rng = sub_stream(k as u64, 902);
        let net = FeedForwardNet::random(&[2, 3, 2], Activation::Tanh, Activation::Tanh, &mut rng).unwrap();
        let mut g = Graph::new(TapeConfig { capacity: 64, horizon: 8, ..TapeConfig::default() }).unwrap();
        let n = g.add_node(NodeSpec::slot("h", 2)).unwrap();
        let p = g.add_pu(PuSpec::new("f", net.clone(), vec![n], vec![n], OptimizerConfig::sgd(0.1))).unwrap();
        let x = random_vec(&mut rng, 2);
        let og = random_vec(&mut rng, 2);
        g.write_node(n, Tensor::vector(x.clone()).unwrap()).unwrap();
        for _ in 0..k {
            g.execute_pu(p, false).unwrap();
        }
        let bp = backprop_from_node(&g, n, &og, 8).map_err(|e| e.to_string())?;
        let chain = vec![net.clone(); k];
        let mut expect = ParamGrads::zeros_like(&net);
        for pg in composed_grads(&chain, &x, &og) {
            expect.add_assign(&pg);
        }
        let err = max_rel_err(bp.grads[&p].iter(), expect.iter(), 1e-12);
        if err >= 1e-6 || bp.visited.len() != k {
            return Err(format!("repeated PU k={k}: relative error {err:.2e}, visited {}", bp.visited.len()));
        }
        worst = worst.max(err);
        checked += 1;
    }
    Ok(format!("{checked} chains, worst relative error {worst:.2e}"))
}

/// Train the fixture model directly on the same sample stream.
pub fn standalone_fnn(cfg: &FixtureConfig, seed: u64, samples: usize) -> FeedForwardNet {
    let mut net = cfg.student(seed).unwrap();
    let mut stream = SampleStream::new(cfg, seed).unwrap();
    let mut opt = Optimizer::new(cfg.optimizer.clone());
    for _ in 0..samples {
        let (x, y) = stream.next_sample().unwrap();
        let (out, trace) = net.forward(&x).unwrap();
        let (_, grad) = mse_loss(&out, &y).unwrap();
        let (_, grads) = net.backward(&trace, &grad).unwrap();
        opt.apply(&mut net, &grads).unwrap();
    }
    net
}

/// Truncation-free backprop through time, graded on the last output only.
pub fn standalone_rnn(cfg: &FixtureConfig, seed: u64, sequences: usize) -> FeedForwardNet {
    let mut net = cfg.student(seed).unwrap();
    let mut stream = SampleStream::new(cfg, seed).unwrap();
    let mut opt = Optimizer::new(cfg.optimizer.clone());
    for _ in 0..sequences {
        let (xs, target) = stream.next_sequence().unwrap();
        let mut mem = vec![0.0; cfg.memory_len];
        let mut traces = Vec::new();
        let mut last = Vec::new();
        for x in &xs {
            let mut input = x.clone();
            input.extend(&mem);
            let (out, t) = net.forward(&input).unwrap();
            traces.push(t);
            mem = out[cfg.output_len..].to_vec();
            last = out[..cfg.output_len].to_vec();
        }
        let (_, gy) = mse_loss(&last, &target).unwrap();
        let mut out_grad = gy;
        out_grad.extend(vec![0.0; cfg.memory_len]);
        let mut grads = ParamGrads::zeros_like(&net);
        for t in traces.iter().rev() {
            let ig = net.backward_accumulate(t, &out_grad, &mut grads).unwrap();
            out_grad = vec![0.0; cfg.output_len];
            out_grad.extend(&ig[cfg.input_len..]);
        }
        opt.apply(&mut net, &grads).unwrap();
    }
    net
}

pub fn fixture_params(net: &InteractionNetwork, pu: PuId) -> Vec<f64> {
    net.graph().pu(pu).unwrap().net.params().copied().collect()
}

/// Criterion 3: a scripted network trains its PU exactly like direct training.
pub fn check_fnn_emulation() -> Check {
    let cfg = FixtureConfig::default();
    let seed = 3;
    let (mut net, layout) = fixture_network(&cfg, seed, TapeConfig::default()).map_err(|e| e.to_string())?;
    let before = fixture_params(&net, layout.pu);
    net.run(2000, |_, _| ControlFlow::Continue(())).map_err(|e| e.to_string())?;
    let got = fixture_params(&net, layout.pu);
    let expect: Vec<f64> = standalone_fnn(&cfg, seed, 1000).params().copied().collect();
    let err = max_rel_err(&got, &expect, 1e-12);
    let moved = max_rel_err(&before, &expect, 1e-12);
    if err < 1e-6 && moved > 1e-3 {
        Ok(format!("1000 samples, relative error {err:.2e}"))
    } else {
        Err(format!("relative error {err:.2e}, parameters moved {moved:.2e}"))
    }
}

pub fn rnn_emulation_error(sequences: usize, seed: u64) -> f64 {
    let cfg = FixtureConfig { kind: FixtureKind::Rnn, ..FixtureConfig::default() };
    let (mut net, layout) = fixture_network(&cfg, seed, TapeConfig::default()).unwrap();
    net.run((2 * cfg.seq_len * sequences) as u64, |_, _| ControlFlow::Continue(())).unwrap();
    let expect: Vec<f64> = standalone_rnn(&cfg, seed, sequences).params().copied().collect();
    max_rel_err(&fixture_params(&net, layout.pu), &expect, 1e-12)
}

pub fn probe_cu(n_features: usize, n_actions: usize, seed: u64) -> ControlUnit {
    let layout = StateLayout::new((0..n_features).map(|i| FeatureKey::Signal { env: EnvId(0), index: i }).collect()).unwrap();
    let actions: Vec<ActionId> = (0..n_actions).map(|i| ActionId::Pu(PuId(i))).collect();
    let cfg = CuConfig { hidden: vec![16], batch_size: 8, buffer_capacity: 64, ..CuConfig::default() };
    ControlUnit::new(cfg, layout, &actions, sub_stream(seed, 903)).unwrap()
}

/// Random transitions the CU has learned from.
pub fn trained_probe_cu(seed: u64) -> ControlUnit {
    let mut cu = probe_cu(4, 3, seed);
    let mut rng = sub_stream(seed, 904);
    for _ in 0..200 {
        let t = Transition {
            state: random_vec(&mut rng, 4),
            action: ActionId::Pu(PuId(rng.gen_range(0..3))),
            reward: rng.gen_range(-1.0..1.0),
            next_state: random_vec(&mut rng, 4),
            episode_end: rng.gen_bool(0.3),
        };
        cu.store(t).unwrap();
        cu.train_step().unwrap();
    }
    cu
}

/// Criterion 4: episode-ending TD targets ignore the next state.
pub fn check_episodic_disruption() -> Check {
    let mut rng = sub_stream(4, 905);
    let mut cases = 0;
    for seed in 0..5 {
        let cu = trained_probe_cu(seed);
        for _ in 0..100 {
            let t = Transition {
                state: random_vec(&mut rng, 4),
                action: ActionId::Pu(PuId(rng.gen_range(0..3))),
                reward: rng.gen_range(-2.0..2.0),
                next_state: random_vec(&mut rng, 4),
                episode_end: true,
            };
            let base = cu.td_target(&t).map_err(|e| e.to_string())?;
            let scale = 10f64.powi(rng.gen_range(-3..7));
            let mutated = Transition { next_state: random_vec(&mut rng, 4).iter().map(|v| v * scale).collect(), ..t.clone() };
            let other = cu.td_target(&mutated).map_err(|e| e.to_string())?;
            if base.to_bits() != other.to_bits() || base != t.reward {
                return Err(format!("target {base} vs {other} for reward {}", t.reward));
            }
            // The full update must not see the next state either.
            let mut a = cu.clone();
            let mut b = cu.clone();
            a.td_update(&[&t]).map_err(|e| e.to_string())?;
            b.td_update(&[&mutated]).map_err(|e| e.to_string())?;
            if a.q_net() != b.q_net() {
                return Err("TD update depends on the next state of an ended episode".into());
            }
            cases += 1;
        }
    }
    Ok(format!("{cases} mutated transitions, targets bit-identical"))
}

/// Criterion 5: adding an action does not change the greedy choice.
pub fn check_dynamic_registration() -> Check {
    let mut cases = 0;
    for seed in 0..4 {
        let mut cu = trained_probe_cu(seed);
        let mut rng = sub_stream(seed, 906);
        let probes: Vec<Vec<f64>> = (0..50).map(|_| random_vec(&mut rng, 4)).collect();
        let greedy = |cu: &ControlUnit| -> Vec<ActionId> {
            probes
                .iter()
                .map(|s| {
                    let q: Vec<f64> = cu.q_values(s).unwrap().iter().map(|(_, v)| *v).collect();
                    cu.argmax(&q)
                })
                .collect()
        };
        let before = greedy(&cu);
        cu.register_action(ActionId::Pu(PuId(3))).map_err(|e| e.to_string())?;
        let after = greedy(&cu);
        if before != after {
            let diff = before.iter().zip(&after).filter(|(a, b)| a != b).count();
            return Err(format!("seed {seed}: greedy action changed on {diff} of 50 probes"));
        }
        cases += 1;
    }
    Ok(format!("{cases} CUs x 50 probe states, argmax unchanged"))
}

pub fn determinism_configs() -> Vec<(String, RunConfig)> {
    let mut out = Vec::new();
    let variants = [Exp1Variant::Base, Exp1Variant::InputsToCu, Exp1Variant::TrainingWheels, Exp1Variant::PretrainedPus];
    for v in variants {
        let mut c = RunConfig { variant: v, iterations: 3000, seed: 11, ..RunConfig::default() };
        c.pretrain.budget = 2000;
        c.wheels.active_until = 1500;
        out.push((format!("exp1 {v:?}"), c));
    }
    for r in [Reductor::Constant { value: 1.0 }, Reductor::Xor] {
        let mut c = RunConfig { experiment: ExperimentId::Exp2, iterations: 3000, seed: 12, ..RunConfig::default() };
        c.exp2.reductor = r;
        c.wheels.enabled = true;
        c.wheels.active_until = 1500;
        out.push((format!("exp2 {r:?}"), c));
    }
    for k in [FixtureKind::Fnn, FixtureKind::Rnn] {
        let mut c = RunConfig { experiment: ExperimentId::Fixture, iterations: 2000, seed: 13, ..RunConfig::default() };
        c.fixture.kind = k;
        out.push((format!("fixture {k:?}"), c));
    }
    out
}

pub fn metrics_bytes(cfg: &RunConfig) -> Vec<u8> {
    let mut buf = Vec::new();
    run_experiment(cfg.clone(), &mut buf, None, |_, _| ControlFlow::Continue(())).unwrap();
    buf
}

/// Criterion 6: identical config and seed give byte-identical metrics.
pub fn check_determinism() -> Check {
    let configs = determinism_configs();
    for (name, cfg) in &configs {
        let a = metrics_bytes(cfg);
        let b = metrics_bytes(cfg);
        if a != b {
            return Err(format!("{name}: metrics streams differ"));
        }
        if a.is_empty() {
            return Err(format!("{name}: empty metrics stream"));
        }
    }
    Ok(format!("{} experiment configs, streams byte-identical", configs.len()))
}

pub fn exp1_oracle_nets() -> [FeedForwardNet; 3] {
    let compare =
        FeedForwardNet::from_layers(vec![Dense::new(vec![50.0, -50.0], vec![0.0], 2, Activation::Sigmoid).unwrap()]).unwrap();
    [compare, linear(vec![2.0], vec![0.0], 1), linear(vec![0.5], vec![0.0], 1)]
}

/// Per-episode environment reward of the scripted agent over `tasks` Exp1 tasks.
pub fn exp1_oracle_rewards(variant: Exp1Variant, tasks: usize, seed: u64) -> Vec<f64> {
    episode_rewards(&mut exp1_oracle_network(variant, seed), tasks)
}

pub fn exp1_oracle_network(variant: Exp1Variant, seed: u64) -> InteractionNetwork {
    let tape = TapeConfig::default();
    let (graph, layout) = build_exp1_graph(variant, exp1_oracle_nets(), &PuConfig::default(), tape.clone()).unwrap();
    let env = Exp1Env::new(Exp1Config::default(), variant, layout, stream(seed, Stream::Environment));
    scripted_network(graph, vec![Box::new(env)], tape, seed)
}

/// Run until `episodes` episodes end; returns the summed reward of each.
pub fn episode_rewards(net: &mut InteractionNetwork, episodes: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let mut acc = 0.0;
    let mut steps = 0;
    while out.len() < episodes {
        let o = net.step().unwrap();
        acc += o.env_reward;
        steps += 1;
        assert!(steps < 100 * (episodes + 1), "episodes do not end");
        if o.episode_end {
            out.push(acc);
            acc = 0.0;
        }
    }
    out
}

pub fn exp2_oracle_network(reductor: Reductor, n: usize, seed: u64) -> InteractionNetwork {
    let tape = TapeConfig::default();
    let nets = exp2_oracle_nets(reductor).unwrap();
    let (graph, layout) = build_exp2_graph(nets, &PuConfig::default(), tape.clone()).unwrap();
    let cfg = Exp2Config { reductor, start_len: n, ..Exp2Config::default() };
    let env = Exp2Env::new(cfg, layout, stream(seed, Stream::Environment)).unwrap();
    scripted_network(graph, vec![Box::new(env)], tape, seed)
}

/// Criterion 7: the scripted agent with oracle PUs earns full reward.
pub fn check_solvability() -> Check {
    for variant in [Exp1Variant::Base, Exp1Variant::InputsToCu, Exp1Variant::TrainingWheels, Exp1Variant::PretrainedPus] {
        let rewards = exp1_oracle_rewards(variant, 1000, 7);
        if let Some((i, r)) = rewards.iter().enumerate().find(|(_, r)| **r != 1.0) {
            return Err(format!("exp1 {variant:?} task {i}: reward {r}"));
        }
    }
    for reductor in [Reductor::Constant { value: 1.0 }, Reductor::Passthrough, Reductor::Xor] {
        for n in 1..=20 {
            let mut net = exp2_oracle_network(reductor, n, n as u64);
            // Fewer episodes than the streak that would lengthen the sequence.
            let rewards = episode_rewards(&mut net, 5);
            if let Some(r) = rewards.iter().find(|r| **r != 1.0) {
                return Err(format!("exp2 {reductor:?} n={n}: reward {r}"));
            }
            let env = net.env(EnvId(0)).unwrap().as_any().downcast_ref::<Exp2Env>().unwrap();
            if env.required_len() != n {
                return Err(format!("exp2 {reductor:?}: length moved to {} during the check", env.required_len()));
            }
        }
    }
    Ok("exp1 1000 tasks per variant and exp2 n=1..20 per reductor, all rewards 1.0".into())
}
