//! On-disk layout: `root/<subject>/<session>/` holding `meta.toml`, `rf.f32`
//! (little-endian `f32`, frame-major, then channel, then sample) and
//! `labels.txt` (one class id per line).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::signal::{Modality, NetworkInput, Provenance, RfRecording, SignalError};

pub const META_FILE: &str = "meta.toml";
pub const RF_FILE: &str = "rf.f32";
pub const LABEL_FILE: &str = "labels.txt";
pub const INPUT_FILE: &str = "inputs.f32";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Meta { path: PathBuf, msg: String },
    #[error("{path}: expected {expected} bytes, found {found}")]
    Length {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("{path}: non-finite sample at byte offset {offset}")]
    NonFinite { path: PathBuf, offset: usize },
    #[error("{path}: line {line} (byte offset {offset}): {msg}")]
    Label {
        path: PathBuf,
        line: usize,
        offset: usize,
        msg: String,
    },
    #[error("session {session}: {labels} labels for {frames} frames in {path}")]
    LabelCount {
        path: PathBuf,
        session: String,
        labels: usize,
        frames: usize,
    },
    #[error("session {session}: {source}")]
    Invalid {
        session: String,
        source: SignalError,
    },
    #[error("{0}: no sessions found")]
    Empty(PathBuf),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordingMeta {
    subject_id: String,
    session_id: String,
    channels: usize,
    samples_per_frame: usize,
    sampling_rate_hz: f64,
    center_frequency_hz: f64,
    class_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InputMeta {
    subject_id: String,
    session_id: String,
    modality: Modality,
    channels: usize,
    length: usize,
    frames: Vec<usize>,
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let text = toml::to_string_pretty(value).map_err(|e| DatasetError::Meta {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    fs::write(path, text).map_err(io(path))
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DatasetError> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    toml::from_str(&text).map_err(|e| DatasetError::Meta {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

fn write_labels(path: &Path, labels: impl Iterator<Item = u32>) -> Result<(), DatasetError> {
    let text: String = labels.map(|l| format!("{l}\n")).collect();
    fs::write(path, text).map_err(io(path))
}

fn read_labels(path: &Path) -> Result<Vec<u32>, DatasetError> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    let mut labels = Vec::new();
    let mut offset = 0;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        let trimmed = line.trim();
        if !trimmed.is_empty() {
            let label = trimmed.parse::<u32>().map_err(|e| DatasetError::Label {
                path: path.to_path_buf(),
                line: i + 1,
                offset,
                msg: format!("{trimmed:?}: {e}"),
            })?;
            labels.push(label);
        }
        offset += line.len();
    }
    Ok(labels)
}

fn f32_bytes(values: impl Iterator<Item = f32>) -> Vec<u8> {
    values.flat_map(f32::to_le_bytes).collect()
}

fn read_f32s(path: &Path, expected: usize) -> Result<Vec<f32>, DatasetError> {
    let bytes = fs::read(path).map_err(io(path))?;
    if bytes.len() != expected * 4 {
        return Err(DatasetError::Length {
            path: path.to_path_buf(),
            expected: expected * 4,
            found: bytes.len(),
        });
    }
    let mut out = Vec::with_capacity(expected);
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        if !v.is_finite() {
            return Err(DatasetError::NonFinite {
                path: path.to_path_buf(),
                offset: i * 4,
            });
        }
        out.push(v);
    }
    Ok(out)
}

/// Directory of one recording under `root`.
pub fn session_dir(root: &Path, subject_id: &str, session_id: &str) -> PathBuf {
    root.join(subject_id).join(session_id)
}

/// Writes `rec` under `root/<subject>/<session>/`, replacing earlier files.
pub fn save_recording(root: &Path, rec: &RfRecording) -> Result<PathBuf, DatasetError> {
    let dir = session_dir(root, &rec.subject_id, &rec.session_id);
    fs::create_dir_all(&dir).map_err(io(&dir))?;
    let meta = RecordingMeta {
        subject_id: rec.subject_id.clone(),
        session_id: rec.session_id.clone(),
        channels: rec.channels,
        samples_per_frame: rec.samples_per_frame,
        sampling_rate_hz: rec.sampling_rate_hz,
        center_frequency_hz: rec.center_frequency_hz,
        class_names: rec.class_names.clone(),
    };
    write_toml(&dir.join(META_FILE), &meta)?;
    let rf = dir.join(RF_FILE);
    fs::write(&rf, f32_bytes(rec.samples.iter().copied())).map_err(io(&rf))?;
    write_labels(&dir.join(LABEL_FILE), rec.labels.iter().copied())?;
    Ok(dir)
}

/// Reads and validates one session directory.
pub fn load_recording(dir: &Path) -> Result<RfRecording, DatasetError> {
    let meta: RecordingMeta = read_toml(&dir.join(META_FILE))?;
    let session = format!("{}/{}", meta.subject_id, meta.session_id);
    let label_path = dir.join(LABEL_FILE);
    let labels = read_labels(&label_path)?;
    let frame_len = meta.channels * meta.samples_per_frame;
    let rf = dir.join(RF_FILE);
    let bytes = fs::metadata(&rf).map_err(io(&rf))?.len() as usize;
    if frame_len == 0 || bytes % (frame_len * 4) != 0 {
        return Err(DatasetError::Length {
            path: rf,
            expected: (bytes / (frame_len * 4).max(1)) * frame_len * 4,
            found: bytes,
        });
    }
    let frames = bytes / (frame_len * 4);
    if labels.len() != frames {
        return Err(DatasetError::LabelCount {
            path: label_path,
            session,
            labels: labels.len(),
            frames,
        });
    }
    let samples = read_f32s(&rf, frames * frame_len)?;
    let rec = RfRecording {
        subject_id: meta.subject_id,
        session_id: meta.session_id,
        channels: meta.channels,
        samples_per_frame: meta.samples_per_frame,
        sampling_rate_hz: meta.sampling_rate_hz,
        center_frequency_hz: meta.center_frequency_hz,
        class_names: meta.class_names,
        samples,
        labels,
    };
    rec.validate()
        .map_err(|source| DatasetError::Invalid { session, source })?;
    Ok(rec)
}

/// Every session under `root`, ordered by subject then session directory name.
pub fn load_dataset(root: &Path) -> Result<Vec<RfRecording>, DatasetError> {
    let mut out = Vec::new();
    for subject in sorted_dirs(root)? {
        for session in sorted_dirs(&subject)? {
            if session.join(META_FILE).exists() {
                out.push(load_recording(&session)?);
            }
        }
    }
    if out.is_empty() {
        return Err(DatasetError::Empty(root.to_path_buf()));
    }
    Ok(out)
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(dir).map_err(io(dir))? {
        let path = entry.map_err(io(dir))?.path();
        if path.is_dir() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Writes preprocessed inputs of one session as `meta.toml`, `inputs.f32`
/// and `labels.txt` under `dir`.
pub fn save_network_inputs(dir: &Path, inputs: &[NetworkInput]) -> Result<(), DatasetError> {
    let first = inputs.first().ok_or_else(|| DatasetError::Empty(dir.to_path_buf()))?;
    fs::create_dir_all(dir).map_err(io(dir))?;
    let meta = InputMeta {
        subject_id: first.provenance.subject_id.clone(),
        session_id: first.provenance.session_id.clone(),
        modality: first.modality,
        channels: first.channels,
        length: first.length,
        frames: inputs.iter().map(|x| x.provenance.frame).collect(),
    };
    write_toml(&dir.join(META_FILE), &meta)?;
    let path = dir.join(INPUT_FILE);
    let bytes = f32_bytes(inputs.iter().flat_map(|x| x.data.iter().map(|&v| v as f32)));
    fs::write(&path, bytes).map_err(io(&path))?;
    write_labels(&dir.join(LABEL_FILE), inputs.iter().map(|x| x.label))
}

/// Reads inputs written by [`save_network_inputs`].
pub fn load_network_inputs(dir: &Path) -> Result<Vec<NetworkInput>, DatasetError> {
    let meta: InputMeta = read_toml(&dir.join(META_FILE))?;
    let label_path = dir.join(LABEL_FILE);
    let labels = read_labels(&label_path)?;
    if labels.len() != meta.frames.len() {
        return Err(DatasetError::LabelCount {
            path: label_path,
            session: format!("{}/{}", meta.subject_id, meta.session_id),
            labels: labels.len(),
            frames: meta.frames.len(),
        });
    }
    let size = meta.channels * meta.length;
    let values = read_f32s(&dir.join(INPUT_FILE), size * labels.len())?;
    Ok(values
        .chunks_exact(size.max(1))
        .zip(labels.iter().zip(&meta.frames))
        .map(|(chunk, (&label, &frame))| NetworkInput {
            data: chunk.iter().map(|&v| v as f64).collect(),
            channels: meta.channels,
            length: meta.length,
            modality: meta.modality,
            label,
            provenance: Provenance {
                subject_id: meta.subject_id.clone(),
                session_id: meta.session_id.clone(),
                frame,
            },
        })
        .collect())
}
