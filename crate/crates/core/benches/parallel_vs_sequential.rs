//! Sequential vs rayon execution of the two hot data-parallel loops:
//! per-frame preprocessing and batched model evaluation.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use sonopose::bench::{synth_generate, SynthConfig};
use sonopose::models::{CnnSpec, InputShape, Model, ModelSpec};
use sonopose::signal::{preprocess, Modality, PreprocConfig};
use sonopose::train::evaluate;
use sonopose::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn session() -> sonopose::signal::RfRecording {
    let cfg = SynthConfig {
        frames_per_class: 20,
        ..SynthConfig::default()
    };
    synth_generate(&cfg).unwrap().remove(0)
}

fn bench_preprocess(c: &mut Criterion) {
    let rec = session();
    let mut group = c.benchmark_group("preprocess");
    group.sample_size(10);
    for modality in Modality::ALL {
        let cfg = PreprocConfig::with_modality(modality);
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, modality.key()), &cfg, |b, cfg| {
                b.iter(|| preprocess(&rec, cfg, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn bench_evaluate(c: &mut Criterion) {
    let rec = session();
    let inputs = preprocess(&rec, &PreprocConfig::with_modality(Modality::EnvelopeRf), Execution::Sequential).unwrap();
    let shape = InputShape::new(inputs[0].channels, inputs[0].length);
    let model = Model::build(&ModelSpec::Cnn(CnnSpec::udacnn_ref(6)), shape, 0).unwrap();
    let mut group = c.benchmark_group("evaluate_udacnn_ref");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| evaluate(&model, &inputs, exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_preprocess, bench_evaluate);
criterion_main!(benches);
