mod common;

use tcja_core::arch::parse_arch;
use tcja_core::autodiff::Tape;
use tcja_core::data::augment::one_hot;
use tcja_core::data::stack_batch;
use tcja_core::data::{gen_synthetic, Dataset, SyntheticConfig};
use tcja_core::network::Mode;
use tcja_core::network::{Network, NetworkConfig};
use tcja_core::neuron::{LifConfig, SurrogateKind};
use tcja_core::train::{evaluate, smse_loss, train_step, OptimizerKind, TrainConfig, TrainState};
use tcja_core::{Precision, Tensor};

fn small_data(samples: usize, seed: u64) -> Dataset<f64> {
    let cfg = SyntheticConfig {
        samples,
        seed,
        height: 8,
        width: 8,
        ..Default::default()
    };
    Dataset::from_streams(&gen_synthetic(&cfg).unwrap(), 4, 4).unwrap()
}

fn net_config() -> NetworkConfig {
    NetworkConfig {
        channels: 2,
        height: 8,
        width: 8,
        time_steps: 4,
        num_classes: 4,
        ..NetworkConfig::default()
    }
}

fn sample_loss(net: &Network<f64>, data: &Dataset<f64>, i: usize) -> f64 {
    let input = stack_batch(&[&data.frames[i]]).unwrap();
    let target = Tensor::new(vec![1, 4], one_hot(data.labels[i], 4)).unwrap();
    let mut tape = Tape::new();
    let pass = net.forward(&mut tape, &input, Mode::Eval, false).unwrap();
    let l = smse_loss(&mut tape, pass.output, &target).unwrap();
    tape.value(l).data()[0]
}

#[test]
fn single_step_descends() {
    let data = small_data(8, 5);
    let arch = parse_arch("8C3-LIF-MP2-TCJA-4FC").unwrap();
    for surrogate in [SurrogateKind::Atan, SurrogateKind::Triangle] {
        for i in 0..4 {
            let cfg = NetworkConfig {
                lif: LifConfig {
                    surrogate,
                    ..LifConfig::default()
                },
                ..net_config()
            };
            let net = Network::<f64>::build(&arch, &cfg, i as u64).unwrap();
            let before = sample_loss(&net, &data, i);
            let tc = TrainConfig {
                lr: 1e-5,
                optimizer: OptimizerKind::Sgd,
                precision: Precision::F64,
                ..TrainConfig::default()
            };
            let mut state = TrainState::new(net, &tc).unwrap();
            train_step(&mut state, &data, &[i], None).unwrap();
            let after = sample_loss(&state.net, &data, i);
            assert!(
                after < before,
                "{surrogate:?} sample {i}: {before} -> {after}"
            );
        }
    }
}

#[test]
fn initial_loss_is_between_zero_and_one() {
    let data = small_data(8, 6);
    let arch = parse_arch("8C3-LIF-MP2-8C3-LIF-MP2-8FC-LIF-Voting").unwrap();
    let net = Network::<f64>::build(&arch, &net_config(), 0).unwrap();
    for i in 0..8 {
        let l = sample_loss(&net, &data, i);
        assert!((0.0..=1.0).contains(&l), "{l}");
    }
}

#[test]
fn evaluation_is_repeatable_and_pure() {
    let data = small_data(12, 7);
    let arch = parse_arch("8C3-LIF-MP2-TCJA-0.5DP-8FC-LIF-Voting").unwrap();
    let net = Network::<f64>::build(&arch, &net_config(), 3).unwrap();
    let before = net.params().to_vec();
    let a = evaluate(&net, &data, 5).unwrap();
    let b = evaluate(&net, &data, 12).unwrap();
    assert_eq!(a, b);
    assert_eq!(net.params(), before.as_slice());
    assert_eq!(a.firing_rates.len(), 2);
    assert!(a.firing_rates.iter().all(|r| (0.0..=1.0).contains(r)));
    let total: usize = a.per_class.iter().map(|c| c.total).sum();
    assert_eq!(total, 12);
}

#[test]
fn single_correct_sample_scores_one() {
    let data = small_data(1, 8);
    let arch = parse_arch("4FC").unwrap();
    let mut net = Network::<f64>::build(&arch, &net_config(), 0).unwrap();
    let label = data.labels[0];
    let bias = Tensor::from_fn(&[4], |i| if i == label { 1.0 } else { 0.0 });
    net.set_param("fc0.weight", Tensor::zeros(&[128, 4]))
        .unwrap();
    net.set_param("fc0.bias", bias).unwrap();
    assert_eq!(evaluate(&net, &data, 1).unwrap().accuracy, 1.0);
}

#[test]
fn nan_loss_aborts_with_batch_index() {
    let data = small_data(8, 9);
    let arch = parse_arch("4FC").unwrap();
    let mut net = Network::<f64>::build(&arch, &net_config(), 0).unwrap();
    net.set_param("fc0.bias", Tensor::full(&[4], f64::NAN))
        .unwrap();
    let tc = TrainConfig {
        epochs: 1,
        batch_size: 4,
        precision: Precision::F64,
        ..TrainConfig::default()
    };
    let mut state = TrainState::new(net, &tc).unwrap();
    let err = tcja_core::train::train(&mut state, &data, &data, &tc, None, |_| {}).unwrap_err();
    assert!(
        matches!(err, tcja_core::Error::NanLoss { epoch: 1, batch: 0 }),
        "{err}"
    );
}
