use std::f64::consts::PI;

use super::{BandpassSpec, SignalError};

/// Elementwise time-gain compensation.
pub fn apply_tgc(frame: &[f64], curve: &[f64]) -> Result<Vec<f64>, SignalError> {
    if frame.len() != curve.len() {
        return Err(SignalError::LengthMismatch {
            frame: frame.len(),
            curve: curve.len(),
        });
    }
    Ok(frame.iter().zip(curve).map(|(x, g)| x * g).collect())
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Hamming-windowed sinc bandpass taps, scaled to unit gain at the band
/// center. The filter is symmetric (linear phase) with `order + 1` taps.
pub fn design_bandpass(spec: &BandpassSpec, fs: f64) -> Result<Vec<f64>, SignalError> {
    let nyquist = fs / 2.0;
    let mut errs = Vec::new();
    if !(0.0 < spec.low_hz && spec.low_hz < spec.high_hz && spec.high_hz < nyquist) {
        errs.push(format!(
            "bandpass [{}, {}] Hz must satisfy 0 < low < high < {nyquist}",
            spec.low_hz, spec.high_hz
        ));
    }
    if spec.order < 2 || spec.order % 2 != 0 {
        errs.push(format!("bandpass order {} must be even and >= 2", spec.order));
    }
    if !errs.is_empty() {
        return Err(SignalError::Config(errs));
    }
    let (f1, f2) = (spec.low_hz / fs, spec.high_hz / fs);
    let half = (spec.order / 2) as f64;
    let mut taps: Vec<f64> = (0..=spec.order)
        .map(|n| {
            let m = n as f64 - half;
            let ideal = 2.0 * f2 * sinc(2.0 * f2 * m) - 2.0 * f1 * sinc(2.0 * f1 * m);
            let window = 0.54 - 0.46 * (2.0 * PI * n as f64 / spec.order as f64).cos();
            ideal * window
        })
        .collect();
    let w0 = 2.0 * PI * (f1 + f2) / 2.0;
    let (re, im) = taps.iter().enumerate().fold((0.0, 0.0), |(re, im), (n, h)| {
        (re + h * (w0 * n as f64).cos(), im - h * (w0 * n as f64).sin())
    });
    let gain = re.hypot(im);
    for t in &mut taps {
        *t /= gain;
    }
    Ok(taps)
}

/// Designed FIR bandpass, applied with its group delay removed.
#[derive(Debug, Clone)]
pub struct Bandpass {
    taps: Vec<f64>,
}

impl Bandpass {
    pub fn design(spec: &BandpassSpec, fs: f64) -> Result<Self, SignalError> {
        Ok(Self {
            taps: design_bandpass(spec, fs)?,
        })
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Same-length output: `y[i] = sum_n h[n] x[i + M - n]` with zeros
    /// outside the frame, `M` the group delay.
    pub fn apply(&self, frame: &[f64]) -> Vec<f64> {
        let delay = (self.taps.len() - 1) / 2;
        let len = frame.len() as isize;
        (0..frame.len())
            .map(|i| {
                self.taps
                    .iter()
                    .enumerate()
                    .map(|(n, h)| {
                        let j = i as isize + delay as isize - n as isize;
                        if (0..len).contains(&j) {
                            h * frame[j as usize]
                        } else {
                            0.0
                        }
                    })
                    .sum()
            })
            .collect()
    }
}

/// One-shot bandpass of a single frame.
pub fn bandpass(frame: &[f64], spec: &BandpassSpec, fs: f64) -> Result<Vec<f64>, SignalError> {
    Ok(Bandpass::design(spec, fs)?.apply(frame))
}
