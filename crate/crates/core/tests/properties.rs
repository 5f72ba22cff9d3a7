mod common;

use proptest::prelude::*;
use tcja_core::arch::{parse_arch, ArchSpec, LayerSpec};
use tcja_core::attention::{ccf_values, tcja_forward, tla_values, Fusion, TcjaParams, TcjaVars};
use tcja_core::autodiff::Tape;
use tcja_core::data::augment::{hflip, mixup, one_hot, roll, rotate, shear, SoftSample};
use tcja_core::data::{integrate_frames, slice_bounds, split_train_test, Event, EventStream};
use tcja_core::network::{Network, NetworkConfig};
use tcja_core::neuron::{lif_sequence, LifConfig, SurrogateKind};
use tcja_core::train::{smse_loss, Checkpoint, CheckpointMeta, OptimizerKind, Record, TensorData};
use tcja_core::{Precision, Tensor};

fn tensor(shape: Vec<usize>, lo: f64, hi: f64) -> impl Strategy<Value = Tensor<f64>> {
    let n: usize = shape.iter().product();
    prop::collection::vec(lo..hi, n).prop_map(move |d| Tensor::new(shape.clone(), d).unwrap())
}

fn frames() -> impl Strategy<Value = Tensor<f64>> {
    (1usize..3, 1usize..3, 2usize..7, 2usize..7).prop_flat_map(|(t, c, h, w)| {
        prop::collection::vec(0u8..4, t * c * h * w).prop_map(move |d| {
            Tensor::new(vec![t, c, h, w], d.into_iter().map(f64::from).collect()).unwrap()
        })
    })
}

fn stream() -> impl Strategy<Value = EventStream> {
    (1u16..12, 1u16..12, 0usize..200).prop_flat_map(|(w, h, n)| {
        prop::collection::vec((0u32..50, 0..w, 0..h, 0u8..2), n).prop_map(move |mut ev| {
            ev.sort_by_key(|e| e.0);
            let events = ev
                .into_iter()
                .map(|(t, x, y, p)| Event { t, x, y, p })
                .collect();
            EventStream::new(w, h, events).unwrap()
        })
    })
}

fn layer() -> impl Strategy<Value = LayerSpec> {
    prop_oneof![
        (1usize..512, 1usize..8).prop_map(|(out, k)| LayerSpec::Conv { out, k }),
        (1usize..5).prop_map(LayerSpec::MaxPool),
        (1usize..5).prop_map(LayerSpec::AvgPool),
        (0usize..20).prop_map(|p| LayerSpec::Dropout(p as f64 / 20.0)),
        (1usize..2048).prop_map(LayerSpec::Fc),
        Just(LayerSpec::Voting),
        (
            prop::option::of((1usize..9, 1usize..9)),
            prop::option::of(prop_oneof![Just(Fusion::Multiply), Just(Fusion::Add)])
        )
            .prop_map(|(kernels, fusion)| LayerSpec::Tcja { kernels, fusion }),
    ]
}

fn arch() -> impl Strategy<Value = ArchSpec> {
    prop::collection::vec((layer(), any::<bool>()), 1..12).prop_map(|v| {
        let mut layers = Vec::new();
        for (l, lif) in v {
            let parameterized = matches!(l, LayerSpec::Conv { .. } | LayerSpec::Fc(_));
            layers.push(l);
            if lif && parameterized {
                layers.push(LayerSpec::Lif);
            }
        }
        ArchSpec { layers }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn arch_round_trips(spec in arch()) {
        let text = spec.render();
        let parsed = parse_arch(&text).unwrap();
        prop_assert_eq!(&parsed, &spec);
        prop_assert_eq!(parsed.render(), text);
    }

    #[test]
    fn integration_conserves_events(s in stream(), t in 1usize..10) {
        prop_assume!(s.len() >= t);
        let f: Tensor<f64> = integrate_frames(&s, t).unwrap();
        prop_assert_eq!(f.sum(), s.len() as f64);
        let b = slice_bounds(s.len(), t).unwrap();
        for (j, &(lo, hi)) in b.iter().enumerate() {
            if j + 1 < t {
                prop_assert_eq!(hi - lo, s.len() / t);
            }
        }
        prop_assert_eq!(b[t - 1].1 - b[t - 1].0, s.len() - (s.len() / t) * (t - 1));
        prop_assert_eq!(b[t - 1].1, s.len());
        prop_assert!(f.data().iter().all(|&v| v >= 0.0 && v.fract() == 0.0));
    }

    #[test]
    fn events_round_trip(s in stream()) {
        prop_assert_eq!(&tcja_core::data::events::parse_bin(&s.to_bin()).unwrap(), &s);
        prop_assert_eq!(&tcja_core::data::events::parse_csv(&s.to_csv(), None).unwrap(), &s);
    }

    #[test]
    fn warps_never_add_mass(f in frames(), dx in -6isize..7, dy in -6isize..7, deg in -20.0f64..20.0) {
        let mass = f.sum();
        prop_assert_eq!(hflip(&f).sum(), mass);
        prop_assert_eq!(hflip(&hflip(&f)), f.clone());
        for g in [roll(&f, dx, dy), rotate(&f, deg), shear(&f, deg)] {
            prop_assert!(g.sum() <= mass + 1e-9);
            prop_assert!(g.data().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn mixup_labels_are_distributions(f in frames(), a in 0usize..5, b in 0usize..5, lambda in 0.0f64..=1.0) {
        let g = f.map(|v| v + 1.0);
        let x = SoftSample { frames: f, label: one_hot(a, 5) };
        let y = SoftSample { frames: g, label: one_hot(b, 5) };
        let m = mixup(&x, &y, lambda).unwrap();
        prop_assert!((m.label.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(m.label.iter().filter(|&&v| v != 0.0).count() <= 2);
        prop_assert!(m.frames.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn split_partitions(n_per in prop::collection::vec(10usize..30, 1..5), seed in any::<u64>()) {
        let labels: Vec<usize> = n_per.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat(c).take(n)).collect();
        let (train, test) = split_train_test(&labels, seed).unwrap();
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for (c, &n) in n_per.iter().enumerate() {
            prop_assert_eq!(test.iter().filter(|&&i| labels[i] == c).count(), n / 10);
        }
    }

    #[test]
    fn lif_output_is_binary(x in tensor(vec![6, 5], -3.0, 3.0), tri in any::<bool>(), detach in any::<bool>()) {
        let cfg = LifConfig {
            surrogate: if tri { SurrogateKind::Triangle } else { SurrogateKind::Atan },
            detach_reset: detach,
            ..LifConfig::default()
        };
        let mut tape = Tape::new();
        let v = tape.constant(x);
        let s = lif_sequence(&mut tape, v, &cfg).unwrap();
        prop_assert!(tape.value(s).data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn fusion_scores_in_open_unit_interval(
        x in tensor(vec![4, 3, 2, 2], -2.0, 2.0),
        w in tensor(vec![3, 3, 2], -1.0, 1.0),
        e in tensor(vec![4, 4, 2], -1.0, 1.0),
        add in any::<bool>(),
    ) {
        let fusion = if add { Fusion::Add } else { Fusion::Multiply };
        let params = TcjaParams::new(w, e, fusion).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let vars = TcjaVars::register(&mut tape, &params, false);
        let (y, maps) = tcja_forward(&mut tape, xv, &vars).unwrap();
        prop_assert_eq!(tape.shape(y), x.shape());
        prop_assert!(tape.value(maps.f_map).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn constant_channel_map_degenerates(z in tensor(vec![3, 4], -1.0, 1.0), w in tensor(vec![3, 3, 2], -1.0, 1.0), k in -2.0f64..2.0) {
        let t_map = tla_values(&z, &w).unwrap();
        let c_map = Tensor::full(&[3, 4], k);
        let f = ccf_values(&t_map, &c_map, Fusion::Multiply).unwrap();
        for (a, b) in f.data().iter().zip(t_map.data()) {
            prop_assert!((a - common::sigmoid(k * b)).abs() < 1e-15);
        }
    }

    #[test]
    fn smse_zero_iff_equal(s in tensor(vec![3, 2, 4], 0.0, 1.0), g in tensor(vec![2, 4], 0.0, 1.0)) {
        let loss = |s: &Tensor<f64>| {
            let mut tape = Tape::new();
            let o = tape.constant(s.clone());
            let l = smse_loss(&mut tape, o, &g).unwrap();
            tape.value(l).data()[0]
        };
        let l = loss(&s);
        prop_assert!(l >= 0.0);
        let same = Tensor::from_fn(&[3, 2, 4], |i| g.data()[i % 8]);
        prop_assert_eq!(loss(&same), 0.0);
        prop_assert_eq!(l == 0.0, s == same);
    }

    #[test]
    fn checkpoint_bytes_round_trip(
        a in prop::collection::vec(-1e3f32..1e3, 0..20),
        b in prop::collection::vec(any::<u64>(), 0..5),
        epoch in 0usize..100,
    ) {
        let ck = Checkpoint {
            arch: "4FC".into(),
            meta: CheckpointMeta {
                network: NetworkConfig::default(),
                precision: Precision::F32,
                epoch,
                optimizer: OptimizerKind::Sgd,
                lr: 0.01,
                step: 3,
            },
            records: vec![
                Record { name: "a".into(), shape: vec![a.len()], data: TensorData::F32(a) },
                Record { name: "b".into(), shape: vec![b.len()], data: TensorData::U64(b) },
            ],
        };
        let bytes = ck.encode().unwrap();
        let back = Checkpoint::decode(&bytes).unwrap();
        prop_assert_eq!(back.encode().unwrap(), bytes);
        prop_assert_eq!(back, ck);
    }

    #[test]
    fn uniform_spikes_vote_uniformly(rate_on in 0usize..2, t in 1usize..5) {
        let arch = parse_arch("8FC-Voting").unwrap();
        let cfg = NetworkConfig { channels: 1, height: 1, width: 1, time_steps: t, num_classes: 4, ..NetworkConfig::default() };
        let mut net = Network::<f64>::build(&arch, &cfg, 0).unwrap();
        net.set_param("fc0.weight", Tensor::zeros(&[1, 8])).unwrap();
        net.set_param("fc0.bias", Tensor::full(&[8], rate_on as f64)).unwrap();
        let out = net.rates(&Tensor::zeros(&[t, 2, 1, 1, 1])).unwrap();
        prop_assert!(out.data().iter().all(|&v| v == rate_on as f64));
    }

    #[test]
    fn detach_reset_does_not_change_forward(seed in any::<u64>()) {
        let arch = parse_arch("6C3-LIF-TCJA2x2-MP2-4FC-LIF").unwrap();
        let mut cfg = NetworkConfig { channels: 2, height: 4, width: 4, time_steps: 3, num_classes: 4, ..NetworkConfig::default() };
        let mut r = common::rng(seed);
        let x = common::uniform(&[3, 2, 2, 4, 4], 0.0, 3.0, &mut r);
        cfg.lif.detach_reset = true;
        let a = Network::<f64>::build(&arch, &cfg, seed).unwrap().rates(&x).unwrap();
        cfg.lif.detach_reset = false;
        let b = Network::<f64>::build(&arch, &cfg, seed).unwrap().rates(&x).unwrap();
        prop_assert_eq!(a, b);
    }
}
