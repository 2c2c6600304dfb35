//! Parameter checkpoints: a TOML manifest of named shapes plus a flat file of
//! little-endian `f64` values in declaration order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Tensor;

pub const MANIFEST_FILE: &str = "params.toml";
pub const DATA_FILE: &str = "params.f64";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    params: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

const FORMAT: &str = "f64-le";

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes the checkpoint into `dir` (created if missing) and returns the raw
/// bytes of the data file.
pub fn save_checkpoint(dir: &Path, params: &[NamedTensor]) -> Result<Vec<u8>, CheckpointError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let manifest = Manifest {
        format: FORMAT.to_string(),
        params: params
            .iter()
            .map(|p| Entry {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
            })
            .collect(),
    };
    let mpath = dir.join(MANIFEST_FILE);
    let text = toml::to_string_pretty(&manifest).map_err(|e| CheckpointError::Format {
        path: mpath.clone(),
        msg: e.to_string(),
    })?;
    fs::write(&mpath, text).map_err(io(&mpath))?;
    let mut bytes = Vec::with_capacity(params.iter().map(|p| p.tensor.numel() * 8).sum());
    for p in params {
        for v in p.tensor.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let dpath = dir.join(DATA_FILE);
    fs::write(&dpath, &bytes).map_err(io(&dpath))?;
    Ok(bytes)
}

pub fn load_checkpoint(dir: &Path) -> Result<Vec<NamedTensor>, CheckpointError> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(io(&mpath))?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| CheckpointError::Format {
        path: mpath.clone(),
        msg: e.to_string(),
    })?;
    if manifest.format != FORMAT {
        return Err(CheckpointError::Format {
            path: mpath,
            msg: format!("unsupported format {:?}", manifest.format),
        });
    }
    let dpath = dir.join(DATA_FILE);
    let bytes = fs::read(&dpath).map_err(io(&dpath))?;
    let expected: usize = manifest
        .params
        .iter()
        .map(|e| e.shape.iter().product::<usize>() * 8)
        .sum();
    if bytes.len() != expected {
        return Err(CheckpointError::Format {
            path: dpath,
            msg: format!("expected {expected} bytes, found {}", bytes.len()),
        });
    }
    let mut offset = 0;
    let mut out = Vec::with_capacity(manifest.params.len());
    for e in manifest.params {
        let n: usize = e.shape.iter().product();
        let data: Vec<f64> = bytes[offset..offset + n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset += n * 8;
        let tensor = Tensor::new(e.shape, data).map_err(|err| CheckpointError::Format {
            path: mpath.clone(),
            msg: format!("parameter {}: {err}", e.name),
        })?;
        out.push(NamedTensor {
            name: e.name,
            tensor,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let params = vec![
            NamedTensor {
                name: "w".into(),
                tensor: Tensor::new(vec![2, 3], vec![1.0, -2.5, 3.0, 0.1, 1e-300, -0.0]).unwrap(),
            },
            NamedTensor {
                name: "b".into(),
                tensor: Tensor::vector(vec![7.0]),
            },
        ];
        let bytes = save_checkpoint(dir.path(), &params).unwrap();
        assert_eq!(bytes.len(), 7 * 8);
        let loaded = load_checkpoint(dir.path()).unwrap();
        assert_eq!(loaded, params);

        fs::write(dir.path().join(DATA_FILE), &bytes[..40]).unwrap();
        let err = load_checkpoint(dir.path()).unwrap_err();
        assert!(err.to_string().contains("expected 56 bytes"), "{err}");
    }
}
