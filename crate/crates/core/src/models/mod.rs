//! Declarative classifiers built on the autodiff engine.
//!
//! A [`ModelSpec`] describes either a 1D-CNN layer stack ([`CnnSpec`]) or a
//! patch-based vision transformer ([`VitSpec`]). [`Model::build`] turns a spec
//! and an input shape into named parameter tensors plus a forward pass that
//! maps `[B, C, L]` batches to `[B, classes]` logits.

mod cnn;
mod vit;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{
    load_checkpoint, save_checkpoint, CheckpointError, NamedTensor, Tape, Tensor, TensorError, Var,
};
use crate::rng::{self, Rng};
use crate::signal::NetworkInput;

pub use cnn::{CnnSpec, Feature, Layer};
pub use vit::{sinusoidal_2d, VitSpec};

/// Channels x samples of one network input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub length: usize,
}

impl InputShape {
    pub const fn new(channels: usize, length: usize) -> Self {
        Self { channels, length }
    }
}

/// Input shape the reference models are sized for: 8 transducers, 960
/// samples after trimming.
pub const ULTRA_PRO_INPUT: InputShape = InputShape::new(8, 960);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpecError {
    #[error("layer {index}: {msg}")]
    Layer { index: usize, msg: String },
    #[error("{0}")]
    Constraint(String),
    #[error("parameter mismatch: {0}")]
    Params(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Cnn(CnnSpec),
    Vit(VitSpec),
}

impl ModelSpec {
    pub fn classes(&self) -> usize {
        match self {
            ModelSpec::Cnn(s) => s.classes,
            ModelSpec::Vit(s) => s.classes,
        }
    }

    pub fn validate(&self, input: InputShape) -> Result<(), SpecError> {
        match self {
            ModelSpec::Cnn(s) => s.layer_shapes(input).map(|_| ()),
            ModelSpec::Vit(s) => s.validate(input),
        }
    }

    /// Sets every dropout rate in the spec.
    pub fn set_dropout(&mut self, rate: f64) {
        match self {
            ModelSpec::Cnn(s) => {
                for layer in &mut s.layers {
                    if let Layer::Dropout { rate: r } = layer {
                        *r = rate;
                    }
                }
            }
            ModelSpec::Vit(s) => s.dropout = rate,
        }
    }
}

/// A built classifier: parameters plus the spec they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    input: InputShape,
    params: Vec<NamedTensor>,
    pos_embedding: Option<Tensor>,
}

/// Fan-in scaled uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub(crate) fn init_uniform(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    use rand::Rng as _;
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-bound..bound)).collect(),
    )
    .expect("shape and data agree")
}

pub(crate) fn named(name: impl Into<String>, tensor: Tensor) -> NamedTensor {
    NamedTensor {
        name: name.into(),
        tensor,
    }
}

impl Model {
    /// Builds the model with weights drawn from the `init` stream of `seed`.
    pub fn build(spec: &ModelSpec, input: InputShape, seed: u64) -> Result<Self, SpecError> {
        let mut r = rng::derive(seed, &["init"]);
        let (params, pos_embedding) = match spec {
            ModelSpec::Cnn(s) => (s.init_params(input, &mut r)?, None),
            ModelSpec::Vit(s) => {
                let params = s.init_params(input, &mut r)?;
                (params, Some(s.positional_embedding(input)))
            }
        };
        Ok(Self {
            spec: spec.clone(),
            input,
            params,
            pos_embedding,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn input(&self) -> InputShape {
        self.input
    }

    pub fn params(&self) -> &[NamedTensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [NamedTensor] {
        &mut self.params
    }

    /// Fixed (untrained) positional embedding of a ViT, `[tokens, dim]`.
    pub fn positional_embedding(&self) -> Option<&Tensor> {
        self.pos_embedding.as_ref()
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Replaces the parameters; names and shapes must match exactly.
    pub fn load_params(&mut self, params: Vec<NamedTensor>) -> Result<(), SpecError> {
        if params.len() != self.params.len() {
            return Err(SpecError::Params(format!(
                "expected {} tensors, got {}",
                self.params.len(),
                params.len()
            )));
        }
        for (have, got) in self.params.iter().zip(&params) {
            if have.name != got.name || have.tensor.shape() != got.tensor.shape() {
                return Err(SpecError::Params(format!(
                    "expected {} {:?}, got {} {:?}",
                    have.name,
                    have.tensor.shape(),
                    got.name,
                    got.tensor.shape()
                )));
            }
        }
        self.params = params;
        Ok(())
    }

    /// Registers every parameter on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p.tensor.clone())).collect()
    }

    /// Forward pass from `x: [B, C, L]` to `[B, classes]` logits.
    ///
    /// `dropout` carries the mask generator in training mode; `None` means
    /// evaluation (dropout disabled).
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &[Var],
        x: Var,
        dropout: Option<&mut Rng>,
    ) -> Result<Var, TensorError> {
        let shape = tape.shape(x);
        if shape.len() != 3 || shape[1] != self.input.channels || shape[2] != self.input.length {
            return Err(TensorError::Shape {
                op: "model input",
                lhs: shape.to_vec(),
                rhs: vec![self.input.channels, self.input.length],
            });
        }
        match &self.spec {
            ModelSpec::Cnn(s) => s.forward(tape, params, x, dropout),
            ModelSpec::Vit(s) => {
                let pe = tape.constant(self.pos_embedding.clone().expect("vit has embedding"));
                s.forward(tape, params, x, pe, self.input, dropout)
            }
        }
    }

    /// Eval-mode logits for a batch of inputs.
    pub fn logits(&self, inputs: &[&NetworkInput]) -> Result<Tensor, TensorError> {
        let mut tape = Tape::new();
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| tape.constant(p.tensor.clone()))
            .collect();
        let x = tape.constant(stack_inputs(inputs, self.input)?);
        let out = self.forward(&mut tape, &params, x, None)?;
        Ok(tape.value(out).clone())
    }
}

/// File next to the parameter checkpoint that records the spec and input shape.
pub const MODEL_FILE: &str = "model.toml";

#[derive(Serialize, Deserialize)]
struct ModelManifest {
    input: InputShape,
    spec: ModelSpec,
}

/// Hex SHA-256 of a checkpoint's raw parameter bytes.
pub fn digest_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Model {
    /// Writes `model.toml` plus the parameter checkpoint into `dir` and
    /// returns the digest of the parameter bytes.
    pub fn save(&self, dir: &Path) -> Result<String, CheckpointError> {
        let bytes = save_checkpoint(dir, &self.params)?;
        let path = dir.join(MODEL_FILE);
        let manifest = ModelManifest {
            input: self.input,
            spec: self.spec.clone(),
        };
        let text = toml::to_string_pretty(&manifest).map_err(|e| CheckpointError::Format {
            path: path.clone(),
            msg: e.to_string(),
        })?;
        fs::write(&path, text).map_err(|source| CheckpointError::Io { path, source })?;
        Ok(digest_hex(&bytes))
    }

    /// Rebuilds a model saved by [`Model::save`].
    pub fn load(dir: &Path) -> Result<Self, CheckpointError> {
        let path = dir.join(MODEL_FILE);
        let text = fs::read_to_string(&path).map_err(|source| CheckpointError::Io {
            path: path.clone(),
            source,
        })?;
        let format = |msg: String| CheckpointError::Format {
            path: path.clone(),
            msg,
        };
        let manifest: ModelManifest = toml::from_str(&text).map_err(|e| format(e.to_string()))?;
        let mut model =
            Model::build(&manifest.spec, manifest.input, 0).map_err(|e| format(e.to_string()))?;
        model
            .load_params(load_checkpoint(dir)?)
            .map_err(|e| format(e.to_string()))?;
        Ok(model)
    }

    /// Digest of the parameters as they would be written by [`Model::save`].
    pub fn digest(&self) -> String {
        let mut bytes = Vec::with_capacity(self.param_count() * 8);
        for p in &self.params {
            for v in p.tensor.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        digest_hex(&bytes)
    }
}

/// Stacks inputs into a `[B, C, L]` tensor, checking every shape.
pub fn stack_inputs(inputs: &[&NetworkInput], shape: InputShape) -> Result<Tensor, TensorError> {
    let mut data = Vec::with_capacity(inputs.len() * shape.channels * shape.length);
    for input in inputs {
        if input.channels != shape.channels || input.length != shape.length {
            return Err(TensorError::Shape {
                op: "stack_inputs",
                lhs: vec![input.channels, input.length],
                rhs: vec![shape.channels, shape.length],
            });
        }
        data.extend_from_slice(&input.data);
    }
    Tensor::new(vec![inputs.len(), shape.channels, shape.length], data)
}

#[cfg(test)]
mod tests;
