use rand::Rng as _;

use super::*;
use crate::autodiff::{NamedTensor, Tensor};
use crate::models::{CnnSpec, Layer};
use crate::rng;
use crate::signal::{Modality, Provenance};

fn sample(data: Vec<f64>, channels: usize, label: u32, frame: usize) -> NetworkInput {
    let length = data.len() / channels;
    NetworkInput {
        data,
        channels,
        length,
        modality: Modality::AModeUs,
        label,
        provenance: Provenance {
            subject_id: "s".into(),
            session_id: "t".into(),
            frame,
        },
    }
}

/// Two classes split by the sign of the first feature with margin 0.5.
fn separable(n: usize, seed: u64) -> Vec<NetworkInput> {
    let mut r = rng::from_seed(seed);
    (0..n)
        .map(|i| {
            let label = (i % 2) as u32;
            let sign = if label == 0 { 1.0 } else { -1.0 };
            let mut data: Vec<f64> = (0..4).map(|_| r.gen_range(-1.0..1.0)).collect();
            data[0] = sign * r.gen_range(0.5..1.5);
            sample(data, 1, label, i)
        })
        .collect()
}

fn linear_spec(classes: usize) -> CnnSpec {
    CnnSpec {
        layers: vec![Layer::Flatten, Layer::Dense { out_features: classes }],
        classes,
    }
}

fn linear_model(input: InputShape, classes: usize, seed: u64) -> Model {
    Model::build(&ModelSpec::Cnn(linear_spec(classes)), input, seed).unwrap()
}

#[test]
fn scheduler_examples() {
    let step = Scheduler::Step {
        step_size: 10,
        gamma: 0.5,
    };
    assert_eq!(scheduler_lr(&step, 0.003, 12), 0.0015);
    let exp = Scheduler::Exponential { gamma: 0.9 };
    assert_eq!(scheduler_lr(&exp, 0.003, 0), 0.003);
    assert!((scheduler_lr(&exp, 0.003, 10) - 0.0010460353).abs() < 1e-10);
    assert_eq!(scheduler_lr(&Scheduler::None, 0.003, 57), 0.003);
}

#[test]
fn scheduler_matches_closed_form() {
    let lr0 = 0.003;
    for gamma in [0.5, 0.9, 0.97] {
        let exp = Scheduler::Exponential { gamma };
        let mut prev = f64::INFINITY;
        for epoch in 0..200 {
            let got = scheduler_lr(&exp, lr0, epoch);
            let want = lr0 * (epoch as f64 * gamma.ln()).exp();
            assert!((got - want).abs() <= 1e-12 * want, "epoch {epoch}");
            assert!(got < prev);
            prev = got;
        }
        for s in [1, 3, 10] {
            let step = Scheduler::Step { step_size: s, gamma };
            for epoch in 0..200 {
                let got = scheduler_lr(&step, lr0, epoch);
                let want = lr0 * ((epoch / s) as f64 * gamma.ln()).exp();
                assert!((got - want).abs() <= 1e-12 * want);
                if epoch > 0 {
                    let changed = got != scheduler_lr(&step, lr0, epoch - 1);
                    assert_eq!(changed, epoch % s == 0, "s {s} epoch {epoch}");
                }
            }
        }
    }
}

fn scalar_param(v: f64) -> Vec<NamedTensor> {
    vec![NamedTensor {
        name: "p".into(),
        tensor: Tensor::vector(vec![v]),
    }]
}

fn hyper(lr: f64) -> AdamHyper {
    let d = TrainConfig::default();
    AdamHyper {
        lr,
        beta1: d.beta1,
        beta2: d.beta2,
        epsilon: d.epsilon,
    }
}

#[test]
fn adam_first_step_hand_value() {
    let mut p = scalar_param(1.0);
    let mut s = AdamState::new(&p);
    adam_step(&mut p, &[Tensor::vector(vec![0.5])], &mut s, hyper(0.1)).unwrap();
    // t = 1: m_hat = g and v_hat = g^2, so the step is lr * g / (|g| + eps)
    let expected = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
    assert!((p[0].tensor.data()[0] - expected).abs() < 1e-15);
    assert!((p[0].tensor.data()[0] - 0.900000002).abs() < 1e-12);
    assert_eq!(s.t, 1);
}

#[test]
fn adam_zero_gradient_is_a_no_op() {
    let mut r = rng::from_seed(3);
    let init: Vec<f64> = (0..10).map(|_| r.gen_range(-2.0..2.0)).collect();
    let mut p = vec![NamedTensor {
        name: "w".into(),
        tensor: Tensor::vector(init.clone()),
    }];
    let mut s = AdamState::new(&p);
    for _ in 0..5 {
        adam_step(&mut p, &[Tensor::zeros(&[10])], &mut s, hyper(0.1)).unwrap();
    }
    assert_eq!(p[0].tensor.data(), &init[..]);
}

#[test]
fn adam_identical_params_stay_identical() {
    let t = Tensor::vector(vec![0.3, -1.2, 2.0]);
    let mut p = vec![
        NamedTensor { name: "a".into(), tensor: t.clone() },
        NamedTensor { name: "b".into(), tensor: t },
    ];
    let mut s = AdamState::new(&p);
    let mut r = rng::from_seed(9);
    for _ in 0..50 {
        let g = Tensor::vector((0..3).map(|_| r.gen_range(-1.0..1.0)).collect());
        adam_step(&mut p, &[g.clone(), g], &mut s, hyper(0.01)).unwrap();
    }
    assert_eq!(p[0].tensor, p[1].tensor);
}

#[test]
fn adam_update_sign_survives_loss_scaling() {
    let mut r = rng::from_seed(4);
    let g: Vec<f64> = (0..20).map(|_| r.gen_range(-1.0..1.0)).collect();
    let sign_of_update = |scale: f64, lr: f64| {
        let mut p = vec![NamedTensor {
            name: "w".into(),
            tensor: Tensor::zeros(&[20]),
        }];
        let mut s = AdamState::new(&p);
        let grads = Tensor::vector(g.iter().map(|x| x * scale).collect());
        adam_step(&mut p, &[grads], &mut s, hyper(lr)).unwrap();
        p[0].tensor.data().iter().map(|v| v.signum()).collect::<Vec<_>>()
    };
    let base = sign_of_update(1.0, 0.01);
    for c in [1e-3, 0.5, 7.0, 1e4] {
        assert_eq!(sign_of_update(c, 0.01 / c.max(1.0)), base);
    }
}

#[test]
fn adam_rejects_non_finite_gradient_without_touching_params() {
    let mut p = scalar_param(1.0);
    p.push(NamedTensor {
        name: "layers.3.weight".into(),
        tensor: Tensor::vector(vec![2.0, 3.0]),
    });
    let mut s = AdamState::new(&p);
    let before = p.clone();
    let err = adam_step(
        &mut p,
        &[Tensor::vector(vec![0.1]), Tensor::vector(vec![f64::NAN, 1.0])],
        &mut s,
        hyper(0.1),
    )
    .unwrap_err();
    match err {
        TrainError::NonFiniteGradient { param, step } => {
            assert_eq!(param, "layers.3.weight");
            assert_eq!(step, 1);
        }
        other => panic!("unexpected {other}"),
    }
    assert_eq!(p, before);
    assert_eq!(s.t, 0);
}

fn separable_config(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.05,
        epochs: 20,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn separable_set_is_learned_perfectly() {
    let data = separable(64, 1);
    let input = InputShape::new(1, 4);
    let (model, hist) = train(linear_model(input, 2, 0), &data, &data, &separable_config(5)).unwrap();
    assert_eq!(evaluate(&model, &data, Execution::Sequential).unwrap(), 1.0);
    assert_eq!(hist.len(), 20);
}

#[test]
fn loss_decreases_for_every_seed() {
    let data = separable(64, 2);
    let input = InputShape::new(1, 4);
    for seed in 0..10 {
        let cfg = separable_config(seed);
        let (_, hist) = train_spec(&ModelSpec::Cnn(linear_spec(2)), input, &data, &data, &cfg).unwrap();
        let first = hist.records[0].train_loss;
        let last = hist.records.last().unwrap().train_loss;
        assert!(last < first, "seed {seed}: {first} -> {last}");
    }
}

fn small_cnn() -> ModelSpec {
    ModelSpec::Cnn(CnnSpec {
        layers: vec![
            Layer::Conv1d {
                out_channels: 4,
                kernel: 3,
                stride: 1,
                padding: 0,
            },
            Layer::Relu,
            Layer::MaxPool1d { width: 2, stride: 2 },
            Layer::Flatten,
            Layer::Dropout { rate: 0.2 },
            Layer::Dense { out_features: 3 },
        ],
        classes: 3,
    })
}

fn three_class(n: usize, seed: u64) -> Vec<NetworkInput> {
    let mut r = rng::from_seed(seed);
    (0..n)
        .map(|i| {
            let label = (i % 3) as u32;
            let mut data: Vec<f64> = (0..2 * 12).map(|_| r.gen_range(-0.3..0.3)).collect();
            data[label as usize * 4 + 1] += 1.0;
            data[12 + label as usize * 4 + 2] += 1.0;
            sample(data, 2, label, i)
        })
        .collect()
}

#[test]
fn training_is_bit_deterministic() {
    let data = three_class(45, 1);
    let input = InputShape::new(2, 12);
    let cfg = TrainConfig {
        epochs: 4,
        batch_size: 8,
        seed: 17,
        ..TrainConfig::default()
    };
    let a = train_spec(&small_cnn(), input, &data, &data, &cfg).unwrap();
    let b = train_spec(&small_cnn(), input, &data, &data, &cfg).unwrap();
    assert_eq!(a.1, b.1);
    assert_eq!(a.0.params(), b.0.params());
    let c = train_spec(&small_cnn(), input, &data, &data, &TrainConfig { seed: 18, ..cfg }).unwrap();
    assert_ne!(a.0.params(), c.0.params());
}

#[test]
fn step_schedule_history_has_six_rates() {
    let data = three_class(6, 2);
    let cfg = TrainConfig {
        epochs: 60,
        scheduler: Scheduler::Step {
            step_size: 10,
            gamma: 0.5,
        },
        ..TrainConfig::default()
    };
    let (_, hist) = train_spec(&small_cnn(), InputShape::new(2, 12), &data, &data, &cfg).unwrap();
    assert_eq!(hist.len(), 60);
    let mut rates: Vec<f64> = hist.records.iter().map(|r| r.lr).collect();
    for (e, r) in rates.iter().enumerate() {
        assert_eq!(*r, scheduler_lr(&cfg.scheduler, cfg.learning_rate, e));
    }
    rates.dedup();
    assert_eq!(rates.len(), 6);
}

#[test]
fn constant_logits_score_one_sixth_on_balanced_set() {
    let input = InputShape::new(1, 5);
    let mut model = linear_model(input, 6, 0);
    for p in model.params_mut() {
        p.tensor.data_mut().fill(0.0);
    }
    let mut r = rng::from_seed(1);
    let data: Vec<NetworkInput> = (0..60)
        .map(|i| sample((0..5).map(|_| r.gen_range(-1.0..1.0)).collect(), 1, (i % 6) as u32, i))
        .collect();
    let acc = evaluate(&model, &data, Execution::Sequential).unwrap();
    assert!((acc - 1.0 / 6.0).abs() < 1e-15);
    assert!(predict(&model, &data, Execution::Sequential).unwrap().iter().all(|&p| p == 0));
}

#[test]
fn oracle_model_scores_one() {
    let input = InputShape::new(1, 6);
    let mut model = linear_model(input, 6, 0);
    let mut w = vec![0.0; 36];
    for i in 0..6 {
        w[i * 6 + i] = 1.0;
    }
    model.params_mut()[0].tensor.data_mut().copy_from_slice(&w);
    model.params_mut()[1].tensor.data_mut().fill(0.0);
    let data: Vec<NetworkInput> = (0..30)
        .map(|i| {
            let mut x = vec![0.0; 6];
            x[i % 6] = 1.0;
            sample(x, 1, (i % 6) as u32, i)
        })
        .collect();
    assert_eq!(evaluate(&model, &data, Execution::Parallel).unwrap(), 1.0);
}

#[test]
fn accuracy_matches_independent_argmax_count() {
    let input = InputShape::new(2, 5);
    let model = linear_model(input, 6, 42);
    let mut r = rng::from_seed(43);
    let data: Vec<NetworkInput> = (0..600)
        .map(|i| sample((0..10).map(|_| r.gen_range(-1.0..1.0)).collect(), 2, r.gen_range(0..6), i))
        .collect();
    let w = model.params()[0].tensor.data();
    let b = model.params()[1].tensor.data();
    let mut correct = 0;
    for x in &data {
        let mut best = (0, f64::NEG_INFINITY);
        for j in 0..6 {
            let z: f64 = b[j] + (0..10).map(|i| x.data[i] * w[i * 6 + j]).sum::<f64>();
            if z > best.1 {
                best = (j, z);
            }
        }
        correct += (best.0 == x.label as usize) as usize;
    }
    let expected = correct as f64 / 600.0;
    assert_eq!(evaluate(&model, &data, Execution::Sequential).unwrap(), expected);
    assert_eq!(evaluate(&model, &data, Execution::Parallel).unwrap(), expected);
}

#[test]
fn argmax_prefers_lowest_index() {
    assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
    assert_eq!(argmax(&[0.0; 4]), 0);
}

#[test]
fn permuting_labels_permutes_predictions() {
    let data = three_class(60, 3);
    let input = InputShape::new(2, 12);
    let perm = [2usize, 0, 1];
    let permuted: Vec<NetworkInput> = data
        .iter()
        .map(|x| NetworkInput {
            label: perm[x.label as usize] as u32,
            ..x.clone()
        })
        .collect();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 8,
        learning_rate: 0.01,
        seed: 8,
        ..TrainConfig::default()
    };
    let base = Model::build(&small_cnn(), input, cfg.seed).unwrap();
    // same initialization with head columns moved to the new class slots
    let mut moved = base.clone();
    let n = moved.params().len();
    let (w, b) = (base.params()[n - 2].tensor.clone(), base.params()[n - 1].tensor.clone());
    let rows = w.shape()[0];
    for old in 0..3 {
        let new = perm[old];
        for i in 0..rows {
            moved.params_mut()[n - 2].tensor.data_mut()[i * 3 + new] = w.data()[i * 3 + old];
        }
        moved.params_mut()[n - 1].tensor.data_mut()[new] = b.data()[old];
    }
    let (a, _) = train(base, &data, &data, &cfg).unwrap();
    let (p, _) = train(moved, &permuted, &permuted, &cfg).unwrap();
    let pa = predict(&a, &data, Execution::Sequential).unwrap();
    let pp = predict(&p, &data, Execution::Sequential).unwrap();
    for (x, y) in pa.iter().zip(&pp) {
        assert_eq!(perm[*x], *y);
    }
}

#[test]
fn input_errors_are_reported() {
    let data = three_class(6, 4);
    let input = InputShape::new(2, 12);
    let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
    let mut mixed = data.clone();
    mixed[3].modality = Modality::EnvelopeRf;
    let err = train_spec(&small_cnn(), input, &mixed, &data, &cfg).unwrap_err();
    assert!(matches!(err, TrainError::Input { set: "train", index: 3, .. }), "{err}");
    let mut bad_label = data.clone();
    bad_label[2].label = 9;
    let err = train_spec(&small_cnn(), input, &data, &bad_label, &cfg).unwrap_err();
    assert!(matches!(err, TrainError::Input { set: "validation", index: 2, .. }), "{err}");
    let err = train_spec(&small_cnn(), input, &[], &data, &cfg).unwrap_err();
    assert!(matches!(err, TrainError::EmptyDataset("train")));
    let short = vec![sample(vec![0.0; 20], 2, 0, 0)];
    assert!(train_spec(&small_cnn(), input, &short, &data, &cfg).is_err());
}

#[test]
fn config_validation_lists_every_violation() {
    let cfg = TrainConfig {
        learning_rate: -1.0,
        beta1: 1.0,
        batch_size: 0,
        scheduler: Scheduler::Step {
            step_size: 0,
            gamma: 1.5,
        },
        ..TrainConfig::default()
    };
    match cfg.validate() {
        Err(TrainError::Config(v)) => assert_eq!(v.len(), 5, "{v:?}"),
        other => panic!("unexpected {other:?}"),
    }
    TrainConfig::default().validate().unwrap();
}

#[test]
fn history_exports_csv() {
    let hist = TrainHistory {
        records: vec![EpochRecord {
            epoch: 0,
            lr: 0.003,
            train_loss: 1.5,
            val_acc: 0.25,
        }],
    };
    let mut out = Vec::new();
    hist.write_csv(&mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), "epoch,lr,train_loss,val_acc\n0,0.003,1.5,0.25\n");
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = TrainConfig {
        scheduler: Scheduler::Exponential { gamma: 0.9 },
        seed: 3,
        ..TrainConfig::default()
    };
    let text = toml::to_string(&cfg).unwrap();
    assert_eq!(toml::from_str::<TrainConfig>(&text).unwrap(), cfg);
}
