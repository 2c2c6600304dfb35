use std::f64::consts::PI;

use proptest::prelude::*;
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::*;
use crate::rng;

fn normal(r: &mut rng::Rng) -> f64 {
    r.sample(StandardNormal)
}

const FS: f64 = 40e6;
const FC: f64 = 5e6;
const GUARD: usize = 16;

fn tone(amplitude: f64, f: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| amplitude * (2.0 * PI * f * i as f64 / FS).sin())
        .collect()
}

fn burst(len: usize, delay: f64, amplitude: f64, sigma: f64) -> Vec<f64> {
    (0..len)
        .map(|i| {
            let t = i as f64 - delay;
            amplitude * (-0.5 * (t / sigma).powi(2)).exp() * (2.0 * PI * FC * t / FS).sin()
        })
        .collect()
}

fn recording_from(traces: Vec<Vec<Vec<f64>>>, labels: Vec<u32>) -> RfRecording {
    let channels = traces[0].len();
    let spf = traces[0][0].len();
    let samples = traces
        .iter()
        .flat_map(|f| f.iter().flat_map(|c| c.iter().map(|&v| v as f32)))
        .collect();
    RfRecording {
        subject_id: "s1".into(),
        session_id: "a".into(),
        channels,
        samples_per_frame: spf,
        sampling_rate_hz: FS,
        center_frequency_hz: FC,
        class_names: vec!["rest".into(), "grip".into()],
        samples,
        labels,
    }
}

#[test]
fn tgc_examples() {
    let mut r = rng::from_seed(1);
    let frame: Vec<f64> = (0..64).map(|_| normal(&mut r)).collect();
    assert_eq!(apply_tgc(&frame, &vec![1.0; 64]).unwrap(), frame);
    assert_eq!(
        apply_tgc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 4.0]).unwrap(),
        vec![1.0, 2.0, 4.0]
    );
    let curve = TgcCurve::Exponential { alpha: 0.001 }.gains(64);
    let out = apply_tgc(&frame, &curve).unwrap();
    for (i, (o, x)) in out.iter().zip(&frame).enumerate() {
        let expected = x * (0.001 * i as f64).exp();
        assert!((o - expected).abs() <= 1e-15 * expected.abs().max(1.0));
    }
    assert_eq!(
        apply_tgc(&frame, &[1.0; 3]).unwrap_err(),
        SignalError::LengthMismatch { frame: 64, curve: 3 }
    );
}

#[test]
fn bandpass_passes_center_tone_and_rejects_dc() {
    let spec = BandpassSpec::around(FC);
    let n = 1000;
    let edge = spec.order / 2;
    let x = tone(2.0, FC, n);
    let y = bandpass(&x, &spec, FS).unwrap();
    assert_eq!(y.len(), n);
    let peak = y[edge..n - edge].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!((peak - 2.0).abs() / 2.0 < 0.05, "peak {peak}");
    // phase is preserved (zero group delay after compensation)
    for i in edge..n - edge {
        assert!((y[i] - x[i]).abs() < 0.1, "sample {i}: {} vs {}", y[i], x[i]);
    }

    let dc = bandpass(&vec![3.0; n], &spec, FS).unwrap();
    for v in &dc[edge..n - edge] {
        assert!(v.abs() < 0.01 * 3.0, "dc leak {v}");
    }
    assert_eq!(bandpass(&vec![0.0; n], &spec, FS).unwrap(), vec![0.0; n]);
}

#[test]
fn bandpass_rejects_bad_cutoffs() {
    for (low, high) in [(0.0, 5e6), (6e6, 5e6), (1e6, 20e6), (-1.0, 3e6)] {
        let spec = BandpassSpec {
            low_hz: low,
            high_hz: high,
            order: 64,
        };
        assert!(matches!(bandpass(&[0.0; 16], &spec, FS), Err(SignalError::Config(_))));
    }
    let odd = BandpassSpec {
        order: 63,
        ..BandpassSpec::around(FC)
    };
    assert!(design_bandpass(&odd, FS).is_err());
}

#[test]
fn bandpass_taps_are_symmetric() {
    let taps = design_bandpass(&BandpassSpec::around(FC), FS).unwrap();
    assert_eq!(taps.len(), 65);
    for i in 0..taps.len() {
        assert!((taps[i] - taps[taps.len() - 1 - i]).abs() < 1e-15);
    }
}

#[test]
fn envelope_of_tone_is_its_amplitude() {
    for n in [1000, 1024] {
        let env = envelope(&tone(3.0, FC, n)).unwrap();
        for v in &env[GUARD..n - GUARD] {
            assert!((v - 3.0).abs() / 3.0 < 0.01, "n={n}: {v}");
        }
    }
    // a partial final cycle leaks further in from the edges
    let n = 999;
    let env = envelope(&tone(3.0, FC, n)).unwrap();
    for v in &env[n / 4..3 * n / 4] {
        assert!((v - 3.0).abs() / 3.0 < 0.01, "n={n}: {v}");
    }
    assert_eq!(envelope(&[0.0; 32]).unwrap(), vec![0.0; 32]);
    assert!(matches!(envelope(&[1.0]), Err(SignalError::TooShort { .. })));
}

#[test]
fn envelope_dominates_random_vectors() {
    let mut r = rng::from_seed(2);
    for _ in 0..1000 {
        let n = r.gen_range(2..200);
        let v: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
        let env = envelope(&v).unwrap();
        for (e, x) in env.iter().zip(&v) {
            assert!(*e >= x.abs() - 1e-12 * x.abs().max(1.0));
        }
    }
}

#[test]
fn log_compress_examples() {
    assert_eq!(log_compress(&[10.0, 10.0, 10.0], 60.0).unwrap(), vec![1.0; 3]);
    assert_eq!(log_compress(&[1.0, 10.0], 40.0).unwrap(), vec![0.5, 1.0]);
    assert_eq!(log_compress(&[0.0, 5.0], 60.0).unwrap()[0], 0.0);
    assert!(matches!(log_compress(&[0.0, 0.0], 60.0), Err(SignalError::Degenerate(_))));
    // below the floor clamps to zero
    assert_eq!(log_compress(&[1e-5, 1.0], 60.0).unwrap()[0], 0.0);
}

#[test]
fn preprocess_shape_and_ranges() {
    let mut r = rng::from_seed(3);
    let frames: Vec<Vec<Vec<f64>>> = (0..3)
        .map(|_| (0..8).map(|_| (0..1000).map(|_| normal(&mut r)).collect()).collect())
        .collect();
    let rec = recording_from(frames, vec![0, 1, 0]);
    for modality in Modality::ALL {
        let cfg = PreprocConfig::with_modality(modality);
        let out = preprocess(&rec, &cfg, Execution::Sequential).unwrap();
        assert_eq!(out.len(), 3);
        for (i, input) in out.iter().enumerate() {
            assert_eq!((input.channels, input.length), (8, 996));
            assert_eq!(input.data.len(), 8 * 996);
            assert_eq!(input.label, rec.labels[i]);
            assert_eq!(input.provenance.frame, i);
            match modality {
                Modality::AModeUs => assert!(input.data.iter().all(|v| (0.0..=1.0).contains(v))),
                Modality::EnvelopeRf => assert!(input.data.iter().all(|v| *v >= 0.0)),
            }
        }
        let again = preprocess(&rec, &cfg, Execution::Parallel).unwrap();
        assert_eq!(out, again);
    }
}

#[test]
fn single_reflector_gives_one_dominant_peak_at_its_delay() {
    let delays = [150.0, 300.0, 420.0, 610.0];
    let frame: Vec<Vec<f64>> = delays.iter().map(|&d| burst(800, d, 1.0, 6.0)).collect();
    let rec = recording_from(vec![frame], vec![1]);
    let cfg = PreprocConfig::with_modality(Modality::EnvelopeRf);
    let out = &preprocess(&rec, &cfg, Execution::Sequential).unwrap()[0];
    for (c, &d) in delays.iter().enumerate() {
        let row = out.row(c);
        let max = row.iter().copied().fold(0.0, f64::max);
        let peaks: Vec<usize> = (1..row.len() - 1)
            .filter(|&i| row[i] > 0.5 * max && row[i] >= row[i - 1] && row[i] > row[i + 1])
            .collect();
        assert_eq!(peaks.len(), 1, "channel {c}: {peaks:?}");
        let expected = d - cfg.trim as f64;
        assert!((peaks[0] as f64 - expected).abs() <= 1.0, "channel {c}: {} vs {expected}", peaks[0]);
    }
}

#[test]
fn preprocess_reports_all_config_violations() {
    let rec = recording_from(vec![vec![vec![0.5; 32]]], vec![0]);
    let cfg = PreprocConfig {
        tgc: TgcCurve::Explicit { gains: vec![1.0; 5] },
        bandpass: Some(BandpassSpec {
            low_hz: 9e6,
            high_hz: 2e6,
            order: 64,
        }),
        dynamic_range_db: -3.0,
        ..PreprocConfig::default()
    };
    let SignalError::Config(errs) = preprocess(&rec, &cfg, Execution::Sequential).unwrap_err() else {
        panic!("expected config error");
    };
    assert_eq!(errs.len(), 3, "{errs:?}");
}

#[test]
fn preprocess_annotates_stage_errors_with_location() {
    // channel 1 of frame 0 is silent, so log compression has no reference
    let rec = recording_from(vec![vec![tone(1.0, FC, 64), vec![0.0; 64]]], vec![0]);
    let err = preprocess(&rec, &PreprocConfig::default(), Execution::Sequential).unwrap_err();
    match err {
        SignalError::At { frame, channel, source } => {
            assert_eq!((frame, channel), (0, 1));
            assert!(matches!(*source, SignalError::Degenerate(_)));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn recording_validation_catches_nyquist_and_labels() {
    let mut rec = recording_from(vec![vec![vec![0.0; 16]]], vec![5]);
    rec.sampling_rate_hz = 9e6;
    let SignalError::Recording(errs) = rec.validate().unwrap_err() else {
        panic!()
    };
    assert_eq!(errs.len(), 2, "{errs:?}");
}

proptest! {
    #[test]
    fn envelope_scale_equivariance(seed in any::<u64>(), alpha in 0.01f64..100.0, n in 2usize..300) {
        let mut r = rng::from_seed(seed);
        let v: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
        let scaled: Vec<f64> = v.iter().map(|x| alpha * x).collect();
        let a = envelope(&v).unwrap();
        let b = envelope(&scaled).unwrap();
        let top = a.iter().copied().fold(0.0, f64::max);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((alpha * x - y).abs() <= 1e-9 * (alpha * top).max(f64::MIN_POSITIVE));
        }
    }

    #[test]
    fn log_compress_is_monotone(seed in any::<u64>(), n in 1usize..100, dr in 1.0f64..120.0) {
        let mut r = rng::from_seed(seed);
        let a: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..1.0)).collect();
        let mut b: Vec<f64> = a.iter().map(|x| x + r.gen_range(0.0..0.5)).collect();
        // equal maxima: append a shared maximum to both
        let mut a = a;
        a.push(2.0);
        b.push(2.0);
        let (oa, ob) = (log_compress(&a, dr).unwrap(), log_compress(&b, dr).unwrap());
        for (x, y) in oa.iter().zip(&ob) {
            prop_assert!(x <= y);
            prop_assert!((0.0..=1.0).contains(x));
        }
        prop_assert_eq!(*oa.last().unwrap(), 1.0);
    }

    #[test]
    fn trim_shape_law(trim in 0usize..6, spf in 13usize..60, channels in 1usize..4) {
        let mut r = rng::from_seed(spf as u64);
        let frame: Vec<Vec<f64>> = (0..channels).map(|_| (0..spf).map(|_| normal(&mut r)).collect()).collect();
        let rec = recording_from(vec![frame], vec![0]);
        let cfg = PreprocConfig { trim, modality: Modality::EnvelopeRf, ..PreprocConfig::default() };
        let out = preprocess(&rec, &cfg, Execution::Sequential).unwrap();
        prop_assert_eq!(out[0].length, spf - 2 * trim);
        prop_assert_eq!(out[0].channels, channels);
    }
}
