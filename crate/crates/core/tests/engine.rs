use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use relureduce::data::SyntheticBlobs;
use relureduce::engine::{
    checkpoint_bytes, checkpoint_from_bytes, cross_entropy, grad_check, grad_check_with, kd_loss, param_name, softmax,
    train, Batch, KdConfig, Mode, Model, Params, Schedule, Sgd, Tape, Teacher, Tensor, TrainConfig, WEIGHT,
};
use relureduce::netir::{LayerKind, LayerNode, NetworkGraph, TensorShape};
use relureduce::Error;

fn cnn3() -> NetworkGraph {
    let conv = |id: &str, input: &str, out: usize, stride: usize| {
        LayerNode::new(
            id,
            LayerKind::Conv2d { out_channels: out, kernel: 3, stride, padding: 1, groups: 1, bias: true },
            vec![input.into()],
        )
    };
    let n = |id: &str, kind: LayerKind, input: &str| LayerNode::new(id, kind, vec![input.into()]);
    let mut g = NetworkGraph::new("cnn3", TensorShape::image(2, 6), 3);
    g.nodes.push(LayerNode::new("in", LayerKind::Input, vec![]));
    g.nodes.push(conv("c1", "in", 4, 1));
    g.nodes.push(n("bn1", LayerKind::BatchNorm, "c1"));
    g.nodes.push(n("r1", LayerKind::Relu, "bn1"));
    g.nodes.push(conv("c2", "r1", 6, 2));
    g.nodes.push(n("r2", LayerKind::Relu, "c2"));
    g.nodes.push(n("gap", LayerKind::GlobalAvgPool, "r2"));
    g.nodes.push(n("flat", LayerKind::Flatten, "gap"));
    g.nodes.push(n("fc", LayerKind::FullyConnected { out_features: 3, bias: true }, "flat"));
    g.infer_shapes().unwrap();
    g
}

fn normal(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

#[test]
fn autodiff_matches_central_differences() {
    let m = Model::<f64>::init(cnn3(), 4).unwrap();
    let x = normal(5 * m.input_len(), 1);
    let labels = [0, 1, 2, 1, 0];
    let batch = Batch { x: &x, labels: &labels };
    let err = grad_check(&m, &batch, 1e-6, 40).unwrap();
    assert!(err < 1e-5, "max relative error {err}");
    let broken = grad_check_with(&m, &batch, 1e-6, 40, |g| {
        for v in g.get_mut(&param_name("c1", WEIGHT)).unwrap() {
            *v *= 1.1;
        }
    })
    .unwrap();
    assert!(broken > 1e-3, "corrupted gradient went unnoticed ({broken})");
}

#[test]
fn kd_uniform_case_is_exact() {
    let zeros = vec![0.0f64; 4 * 6];
    let labels = [0, 1, 2, 3, 0, 1];
    let l = kd_loss(&zeros, &zeros, &labels, 4, &KdConfig::default()).unwrap();
    assert_eq!(l, 0.9 * 4f64.ln());
}

#[test]
fn schedules_follow_closed_forms() {
    let step = Schedule::default();
    for (e, want) in [(0, 0.1), (29, 0.1), (30, 0.01), (59, 0.01), (60, 0.001)] {
        let got = step.lr(0.1, e, 120);
        assert!((got - want).abs() <= 1e-15 * want, "epoch {e}: {got}");
    }
    for e in [0, 29, 30, 59, 60] {
        let want = 0.1 * 0.5 * (1.0 + (std::f64::consts::PI * e as f64 / 150.0).cos());
        assert!((Schedule::Cosine.lr(0.1, e, 150) - want).abs() < 1e-15);
    }
}

#[test]
fn sgd_two_step_recurrence() {
    let mut p = Params::<f64>::new();
    p.insert("w.weight", Tensor::from_vec(&[1], vec![1.0]).unwrap());
    let grads = [("w.weight".to_string(), vec![0.5])].into_iter().collect();
    let mut opt = Sgd::new(0.9, 0.1);
    opt.step(&mut p, &grads, 0.1);
    // v1 = 0.5 + 0.1 = 0.6, w1 = 0.94
    assert!((p.get("w.weight").unwrap().data()[0] - 0.94).abs() < 1e-15);
    opt.step(&mut p, &grads, 0.1);
    // v2 = 0.9*0.6 + 0.5 + 0.094 = 1.134, w2 = 0.8266
    assert!((p.get("w.weight").unwrap().data()[0] - 0.8266).abs() < 1e-15);
}

#[test]
fn backward_needs_a_forward() {
    let m = Model::<f64>::init(cnn3(), 1).unwrap();
    let tape = Tape::new();
    assert!(matches!(m.backward(&tape, &[0.0; 3]), Err(Error::BackwardBeforeForward)));
}

#[test]
fn tensors_check_their_length() {
    assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    let mut t = Tensor::<f32>::zeros(&[2, 2]);
    assert!(t.set_grad(vec![0.0; 3]).is_err());
    assert!(t.set_grad(vec![1.0; 4]).is_ok());
}

fn trained(seed: u64) -> Vec<u8> {
    let data = SyntheticBlobs { channels: 2, ..SyntheticBlobs::new(3, 6, 2) }.generate(90, 0).unwrap();
    let mut m = Model::<f32>::init(cnn3(), seed).unwrap();
    let cfg = TrainConfig { epochs: 3, batch_size: 16, lr0: 0.05, seed, ..TrainConfig::default() };
    let teacher = Model::<f32>::init(cnn3(), seed + 1).unwrap();
    train(&mut m, &data, None, &cfg, Some(Teacher::new(&teacher, KdConfig::default()))).unwrap();
    checkpoint_bytes(&m).unwrap()
}

#[test]
fn training_is_deterministic_across_thread_pools() {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| trained(9));
    let b = four.install(|| {
        use rayon::prelude::*;
        let runs: Vec<Vec<u8>> = (0..3).into_par_iter().map(|_| trained(9)).collect();
        assert!(runs.windows(2).all(|w| w[0] == w[1]));
        runs.into_iter().next().unwrap()
    });
    assert_eq!(a, b);
    assert_ne!(a, trained(10));
}

#[test]
fn training_reduces_loss_and_updates_stats() {
    let data = SyntheticBlobs { channels: 2, ..SyntheticBlobs::new(3, 6, 5) }.generate(120, 0).unwrap();
    let mut m = Model::<f32>::init(cnn3(), 2).unwrap();
    let before = m.params.get(&param_name("bn1", "running_mean")).unwrap().data().to_vec();
    let cfg = TrainConfig { epochs: 6, batch_size: 16, lr0: 0.05, ..TrainConfig::default() };
    let h = train(&mut m, &data, Some(&data), &cfg, None).unwrap();
    assert!(h.final_loss() < 0.5 * h.initial_loss, "{} -> {}", h.initial_loss, h.final_loss());
    assert_ne!(m.params.get(&param_name("bn1", "running_mean")).unwrap().data(), &before[..]);
    assert_eq!(h.to_csv().lines().next(), Some("epoch,lr,train_loss,train_acc,val_acc"));
    assert_eq!(h.to_csv().lines().count(), 7);
}

#[test]
fn frozen_mode_keeps_running_stats() {
    let mut m = Model::<f64>::init(cnn3(), 3).unwrap();
    let name = param_name("bn1", "running_var");
    let before = m.params.get(&name).unwrap().data().to_vec();
    let x = normal(4 * m.input_len(), 8);
    let mut tape = Tape::new();
    m.forward_train(&x, 4, Mode::TrainFrozen, &mut tape).unwrap();
    assert_eq!(m.params.get(&name).unwrap().data(), &before[..]);
    m.forward_train(&x, 4, Mode::Train, &mut tape).unwrap();
    assert_ne!(m.params.get(&name).unwrap().data(), &before[..]);
}

#[test]
fn checkpoint_round_trip_is_byte_stable() {
    let m = Model::<f32>::init(cnn3(), 11).unwrap();
    let a = checkpoint_bytes(&m).unwrap();
    let back = checkpoint_from_bytes(&a).unwrap();
    assert_eq!(checkpoint_bytes(&back).unwrap(), a);
    let mut longer = a.clone();
    longer.push(0);
    assert!(checkpoint_from_bytes(&longer).is_err());
    assert!(checkpoint_from_bytes(&a[..a.len() - 1]).is_err());
    let mut bad = a;
    bad[0] = b'X';
    assert!(checkpoint_from_bytes(&bad).is_err());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(v in prop::collection::vec(-30.0f64..30.0, 12), t in 0.5f64..8.0) {
        let p = softmax(&v, 4, t);
        for row in p.chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn kd_loss_is_nonnegative(s in prop::collection::vec(-10.0f64..10.0, 8), t in prop::collection::vec(-10.0f64..10.0, 8), hw in 0.0f64..=1.0) {
        let kd = KdConfig { temperature: 4.0, hard_weight: hw };
        prop_assert!(kd_loss(&s, &t, &[0, 3], 4, &kd).unwrap() >= -1e-12);
    }

    #[test]
    fn kd_without_hard_term_vanishes_on_agreement(s in prop::collection::vec(-10.0f64..10.0, 8)) {
        let kd = KdConfig { temperature: 2.0, hard_weight: 0.0 };
        prop_assert!(kd_loss(&s, &s, &[1, 2], 4, &kd).unwrap().abs() < 1e-12);
        let (ce, _) = cross_entropy(&s, &[1, 2], 4).unwrap();
        prop_assert!(ce > 0.0);
    }
}
