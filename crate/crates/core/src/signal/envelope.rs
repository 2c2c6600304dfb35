use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::SignalError;

/// Analytic-signal construction for a fixed frame length.
///
/// The plan is built once and shared; `envelope` is safe to call from many
/// threads.
#[derive(Clone)]
pub struct AnalyticSignal {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    weights: Vec<f64>,
}

impl std::fmt::Debug for AnalyticSignal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnalyticSignal").field("len", &self.len).finish()
    }
}

impl AnalyticSignal {
    pub fn new(len: usize) -> Result<Self, SignalError> {
        if len < 2 {
            return Err(SignalError::TooShort { len, min: 2 });
        }
        let mut planner = FftPlanner::new();
        // One-sided spectrum weights: keep DC (and Nyquist for even lengths),
        // double positive frequencies, drop negative ones.
        let mut weights = vec![0.0; len];
        weights[0] = 1.0;
        let half = len / 2;
        if len % 2 == 0 {
            weights[1..half].fill(2.0);
            weights[half] = 1.0;
        } else {
            weights[1..=half].fill(2.0);
        }
        Ok(Self {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `x + i H{x}` for a frame of the planned length.
    pub fn analytic(&self, frame: &[f64]) -> Vec<Complex64> {
        assert_eq!(frame.len(), self.len, "frame length differs from plan");
        let mut buf: Vec<Complex64> = frame.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward.process(&mut buf);
        for (z, w) in buf.iter_mut().zip(&self.weights) {
            *z *= w;
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / self.len as f64;
        for z in &mut buf {
            *z *= scale;
        }
        buf
    }

    /// Magnitude of the analytic signal.
    pub fn envelope(&self, frame: &[f64]) -> Vec<f64> {
        self.analytic(frame).iter().map(|z| z.norm()).collect()
    }
}

/// Envelope of a single frame (plans a transform for its length).
pub fn envelope(frame: &[f64]) -> Result<Vec<f64>, SignalError> {
    Ok(AnalyticSignal::new(frame.len())?.envelope(frame))
}

/// Normalizes by the maximum, converts to dB, clamps at `-dynamic_range_db`
/// and maps `[-dynamic_range_db, 0]` dB linearly onto `[0, 1]`.
pub fn log_compress(env: &[f64], dynamic_range_db: f64) -> Result<Vec<f64>, SignalError> {
    if !(dynamic_range_db > 0.0) {
        return Err(SignalError::Config(vec![format!(
            "dynamic_range_db {dynamic_range_db} must be positive"
        )]));
    }
    let max = env.iter().copied().fold(0.0f64, f64::max);
    if !(max > 0.0) {
        return Err(SignalError::Degenerate(
            "envelope has no positive entry to normalize by".to_string(),
        ));
    }
    let ref_db = 20.0 * max.log10();
    Ok(env
        .iter()
        .map(|&e| {
            if e <= 0.0 {
                return 0.0;
            }
            let db = (20.0 * e.log10() - ref_db).max(-dynamic_range_db);
            (db + dynamic_range_db) / dynamic_range_db
        })
        .collect())
}
