//! RF preprocessing into network inputs.
//!
//! Two modalities are produced from the same raw recording:
//!
//! - [`Modality::AModeUs`]: time-gain compensation, FIR bandpass, analytic
//!   envelope and log compression to `[0, 1]`, per channel.
//! - [`Modality::EnvelopeRf`]: analytic envelope of the raw RF only.
//!
//! Both trim `trim` samples from each end of every channel and stack the
//! channels into a `C x L` matrix.

mod envelope;
mod filter;

use serde::{Deserialize, Serialize};

use crate::par::Execution;

pub use envelope::{envelope, log_compress, AnalyticSignal};
pub use filter::{apply_tgc, bandpass, design_bandpass, Bandpass};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SignalError {
    #[error("gain curve has {curve} entries but the frame has {frame} samples")]
    LengthMismatch { frame: usize, curve: usize },
    #[error("invalid preprocessing configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("invalid recording: {}", .0.join("; "))]
    Recording(Vec<String>),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("signal of length {len} is shorter than the minimum {min}")]
    TooShort { len: usize, min: usize },
    #[error("frame {frame}, channel {channel}: {source}")]
    At {
        frame: usize,
        channel: usize,
        source: Box<SignalError>,
    },
}

/// Network input modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    AModeUs,
    EnvelopeRf,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::AModeUs, Modality::EnvelopeRf];

    /// Stable identifier used in files and seeds.
    pub fn key(self) -> &'static str {
        match self {
            Modality::AModeUs => "amode_us",
            Modality::EnvelopeRf => "envelope_rf",
        }
    }

    /// Row label used in rendered tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Modality::AModeUs => "A-mode US",
            Modality::EnvelopeRf => "Envelope(RF)",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.key() == key)
    }
}

/// Raw multi-channel RF ultrasound for one session.
///
/// `samples` is frame-major, then channel, then sample; the values are raw
/// ADC amplitudes as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RfRecording {
    pub subject_id: String,
    pub session_id: String,
    pub channels: usize,
    pub samples_per_frame: usize,
    pub sampling_rate_hz: f64,
    pub center_frequency_hz: f64,
    /// Gesture names indexed by class id.
    pub class_names: Vec<String>,
    pub samples: Vec<f32>,
    /// One class id per frame.
    pub labels: Vec<u32>,
}

/// Smallest frame that survives the default trim with something left over.
pub const MIN_SAMPLES_PER_FRAME: usize = 8;

impl RfRecording {
    pub fn frames(&self) -> usize {
        self.labels.len()
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    /// One channel of one frame.
    pub fn trace(&self, frame: usize, channel: usize) -> &[f32] {
        let start = (frame * self.channels + channel) * self.samples_per_frame;
        &self.samples[start..start + self.samples_per_frame]
    }

    /// Checks every structural invariant and reports all violations at once.
    pub fn validate(&self) -> Result<(), SignalError> {
        let mut errs = Vec::new();
        if self.channels == 0 {
            errs.push("channels must be at least 1".to_string());
        }
        if self.samples_per_frame < MIN_SAMPLES_PER_FRAME {
            errs.push(format!(
                "samples_per_frame {} is below {MIN_SAMPLES_PER_FRAME}",
                self.samples_per_frame
            ));
        }
        if !(self.sampling_rate_hz > 0.0 && self.center_frequency_hz > 0.0) {
            errs.push("sampling and center frequencies must be positive".to_string());
        } else if self.sampling_rate_hz <= 2.0 * self.center_frequency_hz {
            errs.push(format!(
                "sampling rate {} Hz does not exceed twice the center frequency {} Hz",
                self.sampling_rate_hz, self.center_frequency_hz
            ));
        }
        if self.class_names.is_empty() {
            errs.push("label map is empty".to_string());
        }
        let expected = self.frames() * self.channels * self.samples_per_frame;
        if self.samples.len() != expected {
            errs.push(format!(
                "{} samples for {} frames x {} channels x {} samples",
                self.samples.len(),
                self.frames(),
                self.channels,
                self.samples_per_frame
            ));
        }
        if let Some((f, l)) = self
            .labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l as usize >= self.class_names.len())
        {
            errs.push(format!("frame {f} has label {l} outside the label map"));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(SignalError::Recording(errs))
        }
    }
}

/// Time-gain compensation curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TgcCurve {
    /// Identity gain.
    #[default]
    Unit,
    /// `g[i] = exp(alpha * i)`.
    Exponential { alpha: f64 },
    /// Explicit per-sample gains.
    Explicit { gains: Vec<f64> },
}

impl TgcCurve {
    pub fn gains(&self, len: usize) -> Vec<f64> {
        match self {
            TgcCurve::Unit => vec![1.0; len],
            TgcCurve::Exponential { alpha } => (0..len).map(|i| (alpha * i as f64).exp()).collect(),
            TgcCurve::Explicit { gains } => gains.clone(),
        }
    }
}

/// FIR bandpass description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandpassSpec {
    pub low_hz: f64,
    pub high_hz: f64,
    /// Filter order; the filter has `order + 1` taps. Must be even.
    pub order: usize,
}

impl BandpassSpec {
    pub const DEFAULT_ORDER: usize = 64;

    /// `[0.5 fc, 1.5 fc]`, order 64.
    pub fn around(center_frequency_hz: f64) -> Self {
        Self {
            low_hz: 0.5 * center_frequency_hz,
            high_hz: 1.5 * center_frequency_hz,
            order: Self::DEFAULT_ORDER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocConfig {
    pub modality: Modality,
    pub tgc: TgcCurve,
    /// `None` uses [`BandpassSpec::around`] the recording's center frequency.
    pub bandpass: Option<BandpassSpec>,
    pub dynamic_range_db: f64,
    /// Samples dropped at each end of every channel.
    pub trim: usize,
}

impl Default for PreprocConfig {
    fn default() -> Self {
        Self {
            modality: Modality::AModeUs,
            tgc: TgcCurve::Unit,
            bandpass: None,
            dynamic_range_db: 60.0,
            trim: 2,
        }
    }
}

impl PreprocConfig {
    pub fn with_modality(modality: Modality) -> Self {
        Self {
            modality,
            ..Self::default()
        }
    }

    pub fn bandpass_for(&self, rec: &RfRecording) -> BandpassSpec {
        self.bandpass
            .unwrap_or_else(|| BandpassSpec::around(rec.center_frequency_hz))
    }

    /// Output length for frames of `samples_per_frame`.
    pub fn output_length(&self, samples_per_frame: usize) -> usize {
        samples_per_frame.saturating_sub(2 * self.trim)
    }

    /// Checks the configuration against a recording, listing every violation.
    pub fn validate(&self, rec: &RfRecording) -> Result<(), SignalError> {
        let mut errs = Vec::new();
        let n = rec.samples_per_frame;
        if 2 * self.trim >= n {
            errs.push(format!("trim {} leaves no samples of {n}", self.trim));
        }
        if self.modality == Modality::AModeUs {
            let gains = self.tgc.gains(n);
            if gains.len() != n {
                errs.push(format!(
                    "tgc curve has {} entries, frames have {n} samples",
                    gains.len()
                ));
            }
            if gains.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
                errs.push("tgc gains must be positive and finite".to_string());
            }
            let bp = self.bandpass_for(rec);
            let nyquist = rec.sampling_rate_hz / 2.0;
            if !(0.0 < bp.low_hz && bp.low_hz < bp.high_hz && bp.high_hz < nyquist) {
                errs.push(format!(
                    "bandpass [{}, {}] Hz must satisfy 0 < low < high < {nyquist}",
                    bp.low_hz, bp.high_hz
                ));
            }
            if bp.order < 2 || bp.order % 2 != 0 {
                errs.push(format!("bandpass order {} must be even and >= 2", bp.order));
            }
            if !(self.dynamic_range_db > 0.0) {
                errs.push(format!(
                    "dynamic_range_db {} must be positive",
                    self.dynamic_range_db
                ));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(SignalError::Config(errs))
        }
    }
}

/// Where a network input came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub subject_id: String,
    pub session_id: String,
    pub frame: usize,
}

/// One preprocessed `C x L` frame, row-major by channel.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkInput {
    pub data: Vec<f64>,
    pub channels: usize,
    pub length: usize,
    pub modality: Modality,
    pub label: u32,
    pub provenance: Provenance,
}

impl NetworkInput {
    pub fn row(&self, channel: usize) -> &[f64] {
        &self.data[channel * self.length..(channel + 1) * self.length]
    }
}

/// Converts every frame of `rec` into a [`NetworkInput`].
///
/// Frames are processed independently; `exec` only changes scheduling, never
/// the output.
pub fn preprocess(
    rec: &RfRecording,
    cfg: &PreprocConfig,
    exec: Execution,
) -> Result<Vec<NetworkInput>, SignalError> {
    rec.validate()?;
    cfg.validate(rec)?;
    let n = rec.samples_per_frame;
    let length = cfg.output_length(n);
    let analytic = AnalyticSignal::new(n)?;
    let chain = match cfg.modality {
        Modality::AModeUs => Some((
            cfg.tgc.gains(n),
            Bandpass::design(&cfg.bandpass_for(rec), rec.sampling_rate_hz)?,
        )),
        Modality::EnvelopeRf => None,
    };

    let frames = exec.map_range(rec.frames(), |frame| {
        let mut data = Vec::with_capacity(rec.channels * length);
        for channel in 0..rec.channels {
            let at = |source: SignalError| SignalError::At {
                frame,
                channel,
                source: Box::new(source),
            };
            let raw: Vec<f64> = rec.trace(frame, channel).iter().map(|&v| v as f64).collect();
            let row = match &chain {
                Some((gains, filter)) => {
                    let gained = apply_tgc(&raw, gains).map_err(at)?;
                    let filtered = filter.apply(&gained);
                    let env = analytic.envelope(&filtered);
                    log_compress(&env, cfg.dynamic_range_db).map_err(at)?
                }
                None => analytic.envelope(&raw),
            };
            data.extend_from_slice(&row[cfg.trim..n - cfg.trim]);
        }
        Ok(NetworkInput {
            data,
            channels: rec.channels,
            length,
            modality: cfg.modality,
            label: rec.labels[frame],
            provenance: Provenance {
                subject_id: rec.subject_id.clone(),
                session_id: rec.session_id.clone(),
                frame,
            },
        })
    });
    frames.into_iter().collect()
}

#[cfg(test)]
mod tests;
