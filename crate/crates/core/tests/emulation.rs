mod common;

use std::ops::ControlFlow;

use innet_core::envs::fixtures::{fixture_network, FixtureConfig, FixtureKind, FixtureTask};
use innet_core::graph::EnvId;
use innet_core::tape::TapeConfig;

#[test]
fn fnn_inside_a_network_trains_like_the_plain_net() {
    common::check_fnn_emulation().unwrap();
}

#[test]
fn fnn_emulation_holds_for_other_seeds_and_optimizers() {
    for (seed, opt) in [(0, innet_core::optim::OptimizerConfig::adam(1e-2)), (9, innet_core::optim::OptimizerConfig::sgd(0.2))] {
        let cfg = FixtureConfig { optimizer: opt, hidden: vec![5, 4], ..FixtureConfig::default() };
        let (mut net, layout) = fixture_network(&cfg, seed, TapeConfig::default()).unwrap();
        net.run(600, |_, _| ControlFlow::Continue(())).unwrap();
        let expect: Vec<f64> = common::standalone_fnn(&cfg, seed, 300).params().copied().collect();
        let err = common::max_rel_err(&common::fixture_params(&net, layout.pu), &expect, 1e-12);
        assert!(err < 1e-6, "seed {seed}: {err:e}");
    }
}

#[test]
fn rnn_inside_a_network_matches_backprop_through_time() {
    for seed in [1, 2] {
        let err = common::rnn_emulation_error(200, seed);
        assert!(err < 1e-6, "seed {seed}: {err:e}");
    }
}

#[test]
fn rnn_outputs_match_the_unrolled_model() {
    let cfg = FixtureConfig { kind: FixtureKind::Rnn, optimizer: innet_core::optim::OptimizerConfig::sgd(1e-12), ..FixtureConfig::default() };
    let (mut net, layout) = fixture_network(&cfg, 4, TapeConfig::default()).unwrap();
    let model = net.graph().pu(layout.pu).unwrap().net.clone();
    net.run((2 * cfg.seq_len) as u64, |_, _| ControlFlow::Continue(())).unwrap();
    let task = net.env(EnvId(0)).unwrap().as_any().downcast_ref::<FixtureTask>().unwrap();
    let mut stream = innet_core::envs::fixtures::SampleStream::new(&cfg, 4).unwrap();
    let (xs, _) = stream.next_sequence().unwrap();
    let expect = cfg.unroll(&model, &xs).unwrap();
    assert_eq!(task.outputs().len(), cfg.seq_len);
    for (got, want) in task.outputs().iter().zip(&expect) {
        assert!(common::max_rel_err(got, want, 1e-12) < 1e-9);
    }
}

#[test]
fn short_horizon_truncates_backprop_through_time() {
    let cfg = FixtureConfig { kind: FixtureKind::Rnn, ..FixtureConfig::default() };
    let tape = TapeConfig { horizon: 1, ..TapeConfig::default() };
    let (mut net, layout) = fixture_network(&cfg, 1, tape).unwrap();
    let mut depths = Vec::new();
    net.run((2 * cfg.seq_len * 3) as u64, |_, o| {
        depths.extend(o.gradients.iter().map(|g| g.depth));
        ControlFlow::Continue(())
    })
    .unwrap();
    assert_eq!(depths, vec![1, 1, 1]);
    let full = common::standalone_rnn(&cfg, 1, 3);
    let err = common::max_rel_err(&common::fixture_params(&net, layout.pu), &full.params().copied().collect::<Vec<_>>(), 1e-12);
    assert!(err > 1e-9, "truncated training should differ from full BPTT");
}
