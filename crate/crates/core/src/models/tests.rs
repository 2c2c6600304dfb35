use rand::Rng as _;

use super::*;
use crate::autodiff::{gradcheck_with, Coords};
use crate::rng;

/// Closed-form trainable count for a CNN spec, walking lengths by hand.
fn cnn_count_oracle(spec: &CnnSpec, input: InputShape) -> usize {
    let (mut ch, mut len, mut flat) = (input.channels, input.length, None::<usize>);
    let mut total = 0;
    for layer in &spec.layers {
        match *layer {
            Layer::Conv1d {
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                total += ch * out_channels * kernel + out_channels;
                ch = out_channels;
                len = (len + 2 * padding - kernel) / stride + 1;
            }
            Layer::MaxPool1d { width, stride } => len = (len - width) / stride + 1,
            Layer::Flatten => flat = Some(ch * len),
            Layer::Dense { out_features } => {
                total += flat.unwrap() * out_features + out_features;
                flat = Some(out_features);
            }
            Layer::Relu | Layer::Dropout { .. } => {}
        }
    }
    total
}

/// Closed-form trainable count for a ViT spec.
fn vit_count_oracle(s: &VitSpec) -> usize {
    let d = s.pe_dimension;
    let hidden = s.ffn_mul * d;
    let embed = s.patch_height * s.patch_width * d + d;
    let attention = 4 * (d * d + d);
    let norms = 2 * 2 * d;
    let ffn = d * hidden + hidden + hidden * d + d;
    embed + s.encoder_blocks * (attention + norms + ffn) + d * s.classes + s.classes
}

/// Random legal CNN spec: a few conv/pool/relu/dropout layers, flatten, then
/// one or two dense layers.
fn random_cnn(r: &mut rng::Rng) -> (CnnSpec, InputShape) {
    let input = InputShape::new(r.gen_range(1..6), r.gen_range(16..80));
    let classes = r.gen_range(2..8);
    let mut layers = Vec::new();
    let mut len = input.length;
    for _ in 0..r.gen_range(0..4) {
        match r.gen_range(0..4) {
            0 | 1 => {
                let kernel = r.gen_range(1..=len.min(7));
                let stride = r.gen_range(1..3);
                let padding = r.gen_range(0..2);
                layers.push(Layer::Conv1d {
                    out_channels: r.gen_range(1..9),
                    kernel,
                    stride,
                    padding,
                });
                len = (len + 2 * padding - kernel) / stride + 1;
            }
            2 if len >= 2 => {
                let width = r.gen_range(1..=len.min(3));
                let stride = r.gen_range(1..3);
                layers.push(Layer::MaxPool1d { width, stride });
                len = (len - width) / stride + 1;
            }
            _ => layers.push(if r.gen_bool(0.5) {
                Layer::Relu
            } else {
                Layer::Dropout { rate: 0.2 }
            }),
        }
    }
    layers.push(Layer::Flatten);
    if r.gen_bool(0.5) {
        layers.push(Layer::Dense {
            out_features: r.gen_range(1..12),
        });
        layers.push(Layer::Relu);
    }
    layers.push(Layer::Dense {
        out_features: classes,
    });
    (CnnSpec { layers, classes }, input)
}

fn random_input(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng::from_seed(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn eval_logits(model: &Model, x: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let params: Vec<Var> = model.params().iter().map(|p| tape.constant(p.tensor.clone())).collect();
    let xv = tape.constant(x.clone());
    let out = model.forward(&mut tape, &params, xv, None).unwrap();
    tape.value(out).clone()
}

fn small_vit() -> (VitSpec, InputShape) {
    let spec = VitSpec {
        patch_height: 2,
        patch_width: 4,
        pe_dimension: 8,
        heads: 2,
        encoder_blocks: 2,
        ffn_mul: 2,
        dropout: 0.1,
        classes: 3,
    };
    (spec, InputShape::new(4, 8))
}

#[test]
fn dense_count_on_flattened_input() {
    let spec = CnnSpec {
        layers: vec![Layer::Flatten, Layer::Dense { out_features: 6 }],
        classes: 6,
    };
    let m = Model::build(&ModelSpec::Cnn(spec), InputShape::new(8, 10), 0).unwrap();
    assert_eq!(m.param_count(), 486);
}

#[test]
fn conv_count_formula() {
    let spec = CnnSpec {
        layers: vec![
            Layer::Conv1d {
                out_channels: 16,
                kernel: 5,
                stride: 1,
                padding: 0,
            },
            Layer::Flatten,
            Layer::Dense { out_features: 2 },
        ],
        classes: 2,
    };
    let m = Model::build(&ModelSpec::Cnn(spec), InputShape::new(8, 20), 0).unwrap();
    let conv: usize = m.params()[..2].iter().map(|p| p.tensor.numel()).sum();
    assert_eq!(conv, 656);
}

#[test]
fn udacnn_ref_has_reference_count() {
    let spec = ModelSpec::Cnn(CnnSpec::udacnn_ref(6));
    let m = Model::build(&spec, ULTRA_PRO_INPUT, 0).unwrap();
    assert_eq!(m.param_count(), 50_584);
    if let ModelSpec::Cnn(s) = &spec {
        assert_eq!(cnn_count_oracle(s, ULTRA_PRO_INPUT), 50_584);
        let convs = s.layers.iter().filter(|l| matches!(l, Layer::Conv1d { .. })).count();
        assert_eq!(convs, 4);
    }
}

#[test]
fn param_count_matches_closed_form_for_random_specs() {
    let mut r = rng::from_seed(11);
    for i in 0..100 {
        let (spec, input) = random_cnn(&mut r);
        let expected = cnn_count_oracle(&spec, input);
        let m = Model::build(&ModelSpec::Cnn(spec.clone()), input, i).unwrap();
        assert_eq!(m.param_count(), expected, "spec {spec:?} on {input:?}");
    }
    for i in 0..100 {
        let heads = [1, 2, 4][r.gen_range(0..3)];
        let spec = VitSpec {
            patch_height: [1, 2][r.gen_range(0..2)],
            patch_width: [2, 4, 8][r.gen_range(0..3)],
            pe_dimension: 4 * heads * r.gen_range(1..4),
            heads,
            encoder_blocks: r.gen_range(1..4),
            ffn_mul: r.gen_range(1..4),
            dropout: 0.0,
            classes: r.gen_range(2..7),
        };
        let m = Model::build(&ModelSpec::Vit(spec.clone()), InputShape::new(4, 16), i).unwrap();
        assert_eq!(m.param_count(), vit_count_oracle(&spec), "spec {spec:?}");
    }
}

#[test]
fn usvit_count_is_recorded() {
    let spec = VitSpec::usvit(6);
    let m = Model::build(&ModelSpec::Vit(spec.clone()), ULTRA_PRO_INPUT, 0).unwrap();
    assert_eq!(m.param_count(), vit_count_oracle(&spec));
    // Differs from the published 647,814: patch embedding alone is 960 * 256 + 256.
    assert_eq!(m.param_count(), 1_434_886);
}

#[test]
fn usvit_logits_and_tokens() {
    let spec = VitSpec::usvit(6);
    assert_eq!(spec.grid(ULTRA_PRO_INPUT), (4, 2));
    assert_eq!(spec.tokens(ULTRA_PRO_INPUT), 8);
    let m = Model::build(&ModelSpec::Vit(spec), ULTRA_PRO_INPUT, 3).unwrap();
    let out = eval_logits(&m, &random_input(&[4, 8, 960], 1));
    assert_eq!(out.shape(), &[4, 6]);
    assert!(out.data().iter().all(|v| v.is_finite()));
}

#[test]
fn positional_embedding_origin_pattern() {
    let pe = sinusoidal_2d(4, 2, 256);
    assert_eq!(pe.shape(), &[8, 256]);
    let first = &pe.data()[..256];
    assert_eq!(first[0], 0.0);
    assert_eq!(first[1], 1.0);
    assert_eq!(first[128], 0.0);
    assert_eq!(first[129], 1.0);
    // token (1, 0) encodes row 1 in the first half and column 0 in the second
    let t2 = &pe.data()[2 * 256..3 * 256];
    assert!((t2[0] - 1f64.sin()).abs() < 1e-15);
    assert_eq!(t2[128], 0.0);
    // token (0, 1)
    let t1 = &pe.data()[256..512];
    assert_eq!(t1[0], 0.0);
    assert!((t1[128] - 1f64.sin()).abs() < 1e-15);
}

#[test]
fn vit_constraint_errors_name_the_constraint() {
    let mut spec = VitSpec::usvit(6);
    spec.patch_width = 7;
    spec.heads = 5;
    let err = Model::build(&ModelSpec::Vit(spec), ULTRA_PRO_INPUT, 0).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("patch_width"), "{msg}");
    assert!(msg.contains("heads"), "{msg}");
}

#[test]
fn illegal_cnn_chain_reports_first_bad_layer() {
    let spec = CnnSpec {
        layers: vec![
            Layer::Relu,
            Layer::Dense { out_features: 4 },
            Layer::Conv1d {
                out_channels: 2,
                kernel: 100,
                stride: 1,
                padding: 0,
            },
        ],
        classes: 4,
    };
    match spec.layer_shapes(InputShape::new(2, 10)) {
        Err(SpecError::Layer { index, .. }) => assert_eq!(index, 1),
        other => panic!("unexpected {other:?}"),
    }
    let spec = CnnSpec {
        layers: vec![
            Layer::Conv1d {
                out_channels: 2,
                kernel: 11,
                stride: 1,
                padding: 0,
            },
        ],
        classes: 2,
    };
    assert!(matches!(
        spec.layer_shapes(InputShape::new(2, 10)),
        Err(SpecError::Layer { index: 0, .. })
    ));
    let spec = CnnSpec {
        layers: vec![Layer::Flatten, Layer::Dense { out_features: 3 }],
        classes: 4,
    };
    assert!(matches!(
        spec.layer_shapes(InputShape::new(2, 10)),
        Err(SpecError::Layer { index: 1, .. })
    ));
}

#[test]
fn every_model_maps_batch_to_classes() {
    let mut r = rng::from_seed(5);
    for i in 0..20 {
        let (spec, input) = random_cnn(&mut r);
        let classes = spec.classes;
        let m = Model::build(&ModelSpec::Cnn(spec), input, i).unwrap();
        let batch = 1 + i as usize % 3;
        let out = eval_logits(&m, &random_input(&[batch, input.channels, input.length], i));
        assert_eq!(out.shape(), &[batch, classes]);
    }
    let (spec, input) = small_vit();
    let m = Model::build(&ModelSpec::Vit(spec), input, 0).unwrap();
    assert_eq!(eval_logits(&m, &random_input(&[5, 4, 8], 2)).shape(), &[5, 3]);
}

#[test]
fn eval_mode_is_bit_identical() {
    for spec in [
        ModelSpec::Cnn(CnnSpec::udacnn_ref(6)),
        ModelSpec::Vit(VitSpec::usvit(6)),
    ] {
        let m = Model::build(&spec, ULTRA_PRO_INPUT, 9).unwrap();
        let x = random_input(&[2, 8, 960], 4);
        assert_eq!(eval_logits(&m, &x), eval_logits(&m, &x));
    }
}

#[test]
fn positional_embedding_gets_no_gradient_and_stays_fixed() {
    let (spec, input) = small_vit();
    let m = Model::build(&ModelSpec::Vit(spec), input, 0).unwrap();
    let before = m.positional_embedding().unwrap().clone();
    let mut tape = Tape::new();
    let params = m.bind(&mut tape);
    let x = tape.constant(random_input(&[3, 4, 8], 8));
    let mut dr = rng::from_seed(1);
    let logits = m.forward(&mut tape, &params, x, Some(&mut dr)).unwrap();
    let loss = tape.cross_entropy(logits, &[0, 1, 2]).unwrap();
    let grads = tape.backward(loss).unwrap();
    // only the bound parameters carry gradients; the embedding is a constant leaf
    assert!(params.iter().all(|p| grads.get(*p).is_some()));
    assert_eq!(m.positional_embedding().unwrap(), &before);
    assert_eq!(m.params().len(), params.len());
    assert!(m.params().iter().all(|p| !p.name.contains("pos")));
}

#[test]
fn model_gradients_match_finite_differences() {
    let (spec, input) = small_vit();
    let mut spec = spec;
    spec.dropout = 0.0;
    let vit = Model::build(&ModelSpec::Vit(spec), input, 1).unwrap();
    let cnn = Model::build(
        &ModelSpec::Cnn(CnnSpec {
            layers: vec![
                Layer::Conv1d {
                    out_channels: 3,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                Layer::Relu,
                Layer::MaxPool1d { width: 2, stride: 2 },
                Layer::Flatten,
                Layer::Dense { out_features: 3 },
            ],
            classes: 3,
        }),
        input,
        2,
    )
    .unwrap();
    for m in [vit, cnn] {
        let mut inputs: Vec<Tensor> = m.params().iter().map(|p| p.tensor.clone()).collect();
        inputs.push(random_input(&[2, 4, 8], 3));
        let n = m.params().len();
        let f = |tape: &mut Tape, vars: &[Var]| {
            let logits = m.forward(tape, &vars[..n], vars[n], None)?;
            tape.cross_entropy(logits, &[0, 2])
        };
        let report = gradcheck_with(f, &inputs, 1e-6, Coords::Sample { per_tensor: 6, seed: 4 }).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}

#[test]
fn model_spec_round_trips_through_toml() {
    for spec in [
        ModelSpec::Cnn(CnnSpec::udacnn_ref(6)),
        ModelSpec::Vit(VitSpec::usvit(6)),
    ] {
        let text = toml::to_string(&spec).unwrap();
        let back: ModelSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}

#[test]
fn load_params_rejects_mismatch() {
    let mut m = Model::build(&ModelSpec::Cnn(CnnSpec::udacnn_ref(6)), ULTRA_PRO_INPUT, 0).unwrap();
    let mut p = m.params().to_vec();
    p.pop();
    assert!(m.load_params(p).is_err());
    let p = m.params().to_vec();
    m.load_params(p).unwrap();
}

#[test]
fn save_and_load_round_trip_with_digest() {
    let dir = tempfile::tempdir().unwrap();
    let m = Model::build(&ModelSpec::Vit(small_vit().0), small_vit().1, 7).unwrap();
    let digest = m.save(dir.path()).unwrap();
    assert_eq!(digest, m.digest());
    assert_eq!(digest.len(), 64);
    let back = Model::load(dir.path()).unwrap();
    assert_eq!(back, m);
}
