//! Noise-free synthetic data with disjoint reflector depths must be learned
//! perfectly by the reference CNN in a handful of epochs.

use sonopose::bench::{split_session, synth_generate, Reflector, ReflectorModel, SplitRatios, SynthConfig};
use sonopose::models::{CnnSpec, InputShape, ModelSpec};
use sonopose::signal::{preprocess, Modality, PreprocConfig};
use sonopose::train::{evaluate, train_spec, TrainConfig};
use sonopose::Execution;

fn disjoint_config() -> SynthConfig {
    // Class c puts every channel's single echo in its own depth band
    // [100 + 140 c - 10, 100 + 140 c + 10]; bands never overlap.
    let patterns = (0..6)
        .map(|c| {
            (0..8)
                .map(|ch| {
                    vec![Reflector {
                        depth: 100.0 + 140.0 * c as f64 + ch as f64,
                        amplitude: 1.0,
                    }]
                })
                .collect()
        })
        .collect();
    SynthConfig {
        noise_std: 0.0,
        reflectors: ReflectorModel::Explicit { patterns },
        ..SynthConfig::default()
    }
}

#[test]
fn reference_cnn_separates_noise_free_disjoint_classes_within_ten_epochs() {
    let rec = synth_generate(&disjoint_config()).unwrap().remove(0);
    for modality in Modality::ALL {
        let pcfg = PreprocConfig::with_modality(modality);
        let inputs = preprocess(&rec, &pcfg, Execution::Parallel).unwrap();
        let ds = split_session(inputs, &SplitRatios::default()).unwrap();
        let (train, val, test) = (ds.train(), ds.val(), ds.test());
        let shape = InputShape::new(rec.channels, pcfg.output_length(rec.samples_per_frame));
        let spec = ModelSpec::Cnn(CnnSpec::udacnn_ref(6));
        for seed in 0..5 {
            let cfg = TrainConfig {
                epochs: 10,
                seed,
                ..TrainConfig::default()
            };
            let (model, _) = train_spec(&spec, shape, &train, &val, &cfg).unwrap();
            let ca = evaluate(&model, &test, Execution::Sequential).unwrap();
            assert_eq!(ca, 1.0, "{modality:?} seed {seed}: test CA {ca}");
        }
    }
}
