//! Synthetic multi-channel RF recordings.
//!
//! Each class holds a fixed arrangement of reflectors per channel. A frame's
//! trace is the sum of Gaussian-windowed tone bursts at those reflector
//! delays. A slow wrist rotation shifts every delay sinusoidally over the
//! frame sequence (with a per-channel phase, as the transducers sit around
//! the forearm), and white noise is added on top. Gestures are held one after
//! another, so each class occupies one contiguous block of frames.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::signal::RfRecording;

/// Gesture names used for the first six classes.
pub const GESTURES: [&str; 6] = [
    "Rest",
    "Power Grip",
    "Fine Pinch",
    "Index Point",
    "Tripod Grip",
    "Key Grip",
];

/// Bursts are evaluated out to this many standard deviations.
const BURST_REACH: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid synthesis config: {}", .0.join("; "))]
pub struct SynthError(pub Vec<String>);

/// One echo source: delay in samples from the start of the frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reflector {
    pub depth: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReflectorModel {
    /// Depths and amplitudes drawn uniformly per subject, class and channel.
    Random {
        per_channel: usize,
        min_depth: f64,
        max_depth: f64,
        min_amplitude: f64,
        max_amplitude: f64,
    },
    /// Fixed patterns indexed `[class][channel]`.
    Explicit { patterns: Vec<Vec<Vec<Reflector>>> },
}

impl Default for ReflectorModel {
    fn default() -> Self {
        ReflectorModel::Random {
            per_channel: 3,
            min_depth: 60.0,
            max_depth: 900.0,
            min_amplitude: 0.3,
            max_amplitude: 1.0,
        }
    }
}

/// Reflector patterns indexed `[class][channel]`.
pub type Patterns = Vec<Vec<Vec<Reflector>>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub channels: usize,
    pub samples_per_frame: usize,
    pub sampling_rate_hz: f64,
    pub center_frequency_hz: f64,
    pub classes: usize,
    pub frames_per_class: usize,
    pub frame_rate_hz: f64,
    pub wrist_rotation_hz: f64,
    /// Peak delay shift caused by the rotation, in samples.
    pub rotation_shift_samples: f64,
    /// Standard deviation of the burst window, in samples.
    pub burst_sigma_samples: f64,
    pub noise_std: f64,
    pub subjects: usize,
    pub sessions: usize,
    pub reflectors: ReflectorModel,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            channels: 8,
            samples_per_frame: 964,
            sampling_rate_hz: 40e6,
            center_frequency_hz: 5e6,
            classes: 6,
            frames_per_class: 40,
            frame_rate_hz: 10.0,
            wrist_rotation_hz: 0.5,
            rotation_shift_samples: 6.0,
            burst_sigma_samples: 6.0,
            noise_std: 0.05,
            subjects: 1,
            sessions: 1,
            reflectors: ReflectorModel::default(),
            seed: 0,
        }
    }
}

fn pos(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

impl SynthConfig {
    pub fn class_names(&self) -> Vec<String> {
        (0..self.classes)
            .map(|c| match GESTURES.get(c) {
                Some(name) => (*name).to_string(),
                None => format!("Gesture {}", c + 1),
            })
            .collect()
    }

    /// Delays closer than this to either frame edge would be clipped.
    fn margin(&self) -> f64 {
        self.rotation_shift_samples.abs() + BURST_REACH * self.burst_sigma_samples
    }

    fn depth_ok(&self, depth: f64) -> bool {
        let m = self.margin();
        depth.is_finite() && depth - m >= 0.0 && depth + m <= (self.samples_per_frame as f64) - 1.0
    }

    /// Lists every violated constraint.
    pub fn validate(&self) -> Result<(), SynthError> {
        let mut v = Vec::new();
        for (name, n) in [
            ("channels", self.channels),
            ("classes", self.classes),
            ("frames_per_class", self.frames_per_class),
            ("subjects", self.subjects),
            ("sessions", self.sessions),
        ] {
            if n == 0 {
                v.push(format!("{name} must be at least 1"));
            }
        }
        if self.samples_per_frame < crate::signal::MIN_SAMPLES_PER_FRAME {
            v.push(format!(
                "samples_per_frame {} is below {}",
                self.samples_per_frame,
                crate::signal::MIN_SAMPLES_PER_FRAME
            ));
        }
        for (name, x) in [
            ("sampling_rate_hz", self.sampling_rate_hz),
            ("center_frequency_hz", self.center_frequency_hz),
            ("frame_rate_hz", self.frame_rate_hz),
            ("burst_sigma_samples", self.burst_sigma_samples),
        ] {
            if !pos(x) {
                v.push(format!("{name} {x} must be positive"));
            }
        }
        if pos(self.sampling_rate_hz) && self.sampling_rate_hz <= 2.0 * self.center_frequency_hz {
            v.push("sampling_rate_hz must exceed twice center_frequency_hz".into());
        }
        if !(self.wrist_rotation_hz >= 0.0 && self.wrist_rotation_hz.is_finite()) {
            v.push(format!("wrist_rotation_hz {} must be >= 0", self.wrist_rotation_hz));
        }
        if !self.rotation_shift_samples.is_finite() {
            v.push("rotation_shift_samples must be finite".into());
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            v.push(format!("noise_std {} must be >= 0", self.noise_std));
        }
        match &self.reflectors {
            ReflectorModel::Random {
                per_channel,
                min_depth,
                max_depth,
                min_amplitude,
                max_amplitude,
            } => {
                if *per_channel == 0 {
                    v.push("reflectors.per_channel must be at least 1".into());
                }
                if !(min_depth <= max_depth) {
                    v.push(format!("reflector depth range [{min_depth}, {max_depth}] is empty"));
                } else if !(self.depth_ok(*min_depth) && self.depth_ok(*max_depth)) {
                    v.push(format!(
                        "reflector delays in [{min_depth}, {max_depth}] reach beyond the frame of {} samples (margin {})",
                        self.samples_per_frame,
                        self.margin()
                    ));
                }
                if !(min_amplitude.is_finite() && min_amplitude <= max_amplitude && max_amplitude.is_finite()) {
                    v.push(format!(
                        "reflector amplitude range [{min_amplitude}, {max_amplitude}] is invalid"
                    ));
                }
            }
            ReflectorModel::Explicit { patterns } => {
                if patterns.len() != self.classes {
                    v.push(format!(
                        "{} reflector patterns for {} classes",
                        patterns.len(),
                        self.classes
                    ));
                }
                for (c, pattern) in patterns.iter().enumerate() {
                    if pattern.len() != self.channels {
                        v.push(format!(
                            "class {c} pattern has {} channels, expected {}",
                            pattern.len(),
                            self.channels
                        ));
                    }
                    for (ch, refl) in pattern.iter().enumerate() {
                        for r in refl {
                            if !self.depth_ok(r.depth) {
                                v.push(format!(
                                    "class {c} channel {ch}: reflector delay {} reaches beyond the frame of {} samples (margin {})",
                                    r.depth,
                                    self.samples_per_frame,
                                    self.margin()
                                ));
                            }
                            if !r.amplitude.is_finite() {
                                v.push(format!("class {c} channel {ch}: non-finite amplitude"));
                            }
                        }
                    }
                }
                v.extend(duplicate_patterns(patterns));
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(SynthError(v))
        }
    }

    /// Reflector patterns for subject `subject` (zero-based).
    pub fn patterns(&self, subject: usize) -> Result<Patterns, SynthError> {
        self.validate()?;
        let patterns = match &self.reflectors {
            ReflectorModel::Explicit { patterns } => patterns.clone(),
            ReflectorModel::Random {
                per_channel,
                min_depth,
                max_depth,
                min_amplitude,
                max_amplitude,
            } => {
                let mut r = rng::derive(self.seed, &["reflectors", &subject.to_string()]);
                let mut draw = |lo: f64, hi: f64| if lo == hi { lo } else { r.gen_range(lo..hi) };
                (0..self.classes)
                    .map(|_| {
                        (0..self.channels)
                            .map(|_| {
                                (0..*per_channel)
                                    .map(|_| Reflector {
                                        depth: draw(*min_depth, *max_depth),
                                        amplitude: draw(*min_amplitude, *max_amplitude),
                                    })
                                    .collect()
                            })
                            .collect()
                    })
                    .collect()
            }
        };
        let dups = duplicate_patterns(&patterns);
        if dups.is_empty() {
            Ok(patterns)
        } else {
            Err(SynthError(dups))
        }
    }

    /// Delay shift of `channel` at `frame` under the rotation nuisance.
    pub fn rotation_shift(&self, frame: usize, channel: usize, phase: f64) -> f64 {
        let t = frame as f64 / self.frame_rate_hz;
        let ch_phase = 2.0 * PI * channel as f64 / self.channels as f64;
        self.rotation_shift_samples * (2.0 * PI * self.wrist_rotation_hz * t + ch_phase + phase).sin()
    }
}

fn duplicate_patterns(patterns: &Patterns) -> Vec<String> {
    let mut v = Vec::new();
    for a in 0..patterns.len() {
        for b in a + 1..patterns.len() {
            if patterns[a] == patterns[b] {
                v.push(format!("classes {a} and {b} have identical reflector patterns"));
            }
        }
    }
    v
}

/// One tone burst of the given delay added into `trace`.
fn add_burst(trace: &mut [f64], delay: f64, amplitude: f64, sigma: f64, cycles_per_sample: f64) {
    let reach = BURST_REACH * sigma;
    let lo = (delay - reach).floor().max(0.0) as usize;
    let hi = ((delay + reach).ceil() as usize).min(trace.len() - 1);
    for (n, out) in trace.iter_mut().enumerate().take(hi + 1).skip(lo) {
        let d = n as f64 - delay;
        *out += amplitude * (-0.5 * (d / sigma).powi(2)).exp() * (2.0 * PI * cycles_per_sample * d).cos();
    }
}

/// Generates one recording per (subject, session), subject-major.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<RfRecording>, SynthError> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.subjects * cfg.sessions);
    for subject in 0..cfg.subjects {
        let patterns = cfg.patterns(subject)?;
        for session in 0..cfg.sessions {
            out.push(generate_session(cfg, &patterns, subject, session));
        }
    }
    Ok(out)
}

fn generate_session(cfg: &SynthConfig, patterns: &Patterns, subject: usize, session: usize) -> RfRecording {
    let (subject_id, session_id) = (format!("S{}", subject + 1), format!("session{}", session + 1));
    let mut r = rng::derive(cfg.seed, &["session", &subject_id, &session_id]);
    let phase = r.gen_range(0.0..2.0 * PI);
    let n = cfg.samples_per_frame;
    let frames = cfg.classes * cfg.frames_per_class;
    let cycles_per_sample = cfg.center_frequency_hz / cfg.sampling_rate_hz;
    let mut samples = Vec::with_capacity(frames * cfg.channels * n);
    let mut labels = Vec::with_capacity(frames);
    let mut trace = vec![0.0f64; n];
    for frame in 0..frames {
        let class = frame / cfg.frames_per_class;
        labels.push(class as u32);
        for channel in 0..cfg.channels {
            trace.iter_mut().for_each(|x| *x = 0.0);
            let shift = cfg.rotation_shift(frame, channel, phase);
            for refl in &patterns[class][channel] {
                add_burst(
                    &mut trace,
                    refl.depth + shift,
                    refl.amplitude,
                    cfg.burst_sigma_samples,
                    cycles_per_sample,
                );
            }
            for x in &trace {
                let noise: f64 = if cfg.noise_std > 0.0 {
                    let z: f64 = StandardNormal.sample(&mut r);
                    cfg.noise_std * z
                } else {
                    0.0
                };
                samples.push((x + noise) as f32);
            }
        }
    }
    RfRecording {
        subject_id,
        session_id,
        channels: cfg.channels,
        samples_per_frame: n,
        sampling_rate_hz: cfg.sampling_rate_hz,
        center_frequency_hz: cfg.center_frequency_hz,
        class_names: cfg.class_names(),
        samples,
        labels,
    }
}
