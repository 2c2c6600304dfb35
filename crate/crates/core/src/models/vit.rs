use serde::{Deserialize, Serialize};

use super::{init_uniform, named, InputShape, SpecError};
use crate::autodiff::{NamedTensor, Tape, Tensor, TensorError, Var};
use crate::rng::Rng;

const LN_EPS: f64 = 1e-5;

/// Patch-based vision transformer over a `C x L` input treated as an image.
///
/// Non-overlapping `patch_height x patch_width` patches are embedded linearly
/// to `pe_dimension`, a fixed 2D sinusoidal embedding of the patch grid is
/// added, and `encoder_blocks` pre-norm blocks follow. The classifier is a
/// single dense layer on the mean token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VitSpec {
    pub patch_height: usize,
    pub patch_width: usize,
    pub pe_dimension: usize,
    pub heads: usize,
    pub encoder_blocks: usize,
    /// Feed-forward hidden width as a multiple of `pe_dimension`.
    pub ffn_mul: usize,
    pub dropout: f64,
    pub classes: usize,
}

impl VitSpec {
    /// Best configuration from the ViT search, with `ffn_mul = 1` because the
    /// published configuration leaves it unstated.
    pub fn usvit(classes: usize) -> Self {
        Self {
            patch_height: 2,
            patch_width: 480,
            pe_dimension: 256,
            heads: 16,
            encoder_blocks: 3,
            ffn_mul: 1,
            dropout: 0.1,
            classes,
        }
    }

    /// Patch grid `(rows, cols)` for `input`.
    pub fn grid(&self, input: InputShape) -> (usize, usize) {
        (
            input.channels / self.patch_height,
            input.length / self.patch_width,
        )
    }

    pub fn tokens(&self, input: InputShape) -> usize {
        let (r, c) = self.grid(input);
        r * c
    }

    /// Checks every constraint and reports all violations at once.
    pub fn validate(&self, input: InputShape) -> Result<(), SpecError> {
        let mut v = Vec::new();
        for (name, value) in [
            ("patch_height", self.patch_height),
            ("patch_width", self.patch_width),
            ("pe_dimension", self.pe_dimension),
            ("heads", self.heads),
            ("encoder_blocks", self.encoder_blocks),
            ("ffn_mul", self.ffn_mul),
            ("classes", self.classes),
        ] {
            if value == 0 {
                v.push(format!("{name} must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            v.push(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.patch_height > 0 && input.channels % self.patch_height != 0 {
            v.push(format!(
                "input channels {} not divisible by patch_height {}",
                input.channels, self.patch_height
            ));
        }
        if self.patch_width > 0 && input.length % self.patch_width != 0 {
            v.push(format!(
                "input length {} not divisible by patch_width {}",
                input.length, self.patch_width
            ));
        }
        if self.heads > 0 && self.pe_dimension % self.heads != 0 {
            v.push(format!(
                "pe_dimension {} not divisible by heads {}",
                self.pe_dimension, self.heads
            ));
        }
        if self.pe_dimension % 4 != 0 {
            v.push(format!(
                "pe_dimension {} not divisible by 4 (sin/cos pairs for rows and columns)",
                self.pe_dimension
            ));
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(SpecError::Constraint(v.join("; ")))
        }
    }

    pub(crate) fn positional_embedding(&self, input: InputShape) -> Tensor {
        let (rows, cols) = self.grid(input);
        sinusoidal_2d(rows, cols, self.pe_dimension)
    }

    pub(crate) fn init_params(
        &self,
        input: InputShape,
        rng: &mut Rng,
    ) -> Result<Vec<NamedTensor>, SpecError> {
        self.validate(input)?;
        let d = self.pe_dimension;
        let patch = self.patch_height * self.patch_width;
        let hidden = self.ffn_mul * d;
        let mut p = vec![
            named("embed.weight", init_uniform(&[patch, d], patch, rng)),
            named("embed.bias", Tensor::zeros(&[d])),
        ];
        for b in 0..self.encoder_blocks {
            let pre = format!("blocks.{b}");
            p.push(named(format!("{pre}.norm1.gamma"), Tensor::full(&[d], 1.0)));
            p.push(named(format!("{pre}.norm1.beta"), Tensor::zeros(&[d])));
            for proj in ["q", "k", "v", "o"] {
                p.push(named(format!("{pre}.attn.{proj}.weight"), init_uniform(&[d, d], d, rng)));
                p.push(named(format!("{pre}.attn.{proj}.bias"), Tensor::zeros(&[d])));
            }
            p.push(named(format!("{pre}.norm2.gamma"), Tensor::full(&[d], 1.0)));
            p.push(named(format!("{pre}.norm2.beta"), Tensor::zeros(&[d])));
            p.push(named(format!("{pre}.ffn.0.weight"), init_uniform(&[d, hidden], d, rng)));
            p.push(named(format!("{pre}.ffn.0.bias"), Tensor::zeros(&[hidden])));
            p.push(named(format!("{pre}.ffn.1.weight"), init_uniform(&[hidden, d], hidden, rng)));
            p.push(named(format!("{pre}.ffn.1.bias"), Tensor::zeros(&[d])));
        }
        p.push(named("head.weight", init_uniform(&[d, self.classes], d, rng)));
        p.push(named("head.bias", Tensor::zeros(&[self.classes])));
        Ok(p)
    }

    pub(crate) fn forward(
        &self,
        tape: &mut Tape,
        params: &[Var],
        x: Var,
        pe: Var,
        input: InputShape,
        mut dropout: Option<&mut Rng>,
    ) -> Result<Var, TensorError> {
        let expected = 2 + self.encoder_blocks * 16 + 2;
        if params.len() != expected {
            return Err(TensorError::InvalidArgument {
                op: "vit forward",
                msg: format!("expected {expected} parameters, got {}", params.len()),
            });
        }
        let mut drop = |tape: &mut Tape, h: Var| match dropout.as_deref_mut() {
            Some(r) => tape.dropout(h, self.dropout, true, r),
            None => Ok(h),
        };
        let batch = tape.shape(x)[0];
        let (rows, cols) = self.grid(input);
        let (ph, pw) = (self.patch_height, self.patch_width);

        // [B, C, L] -> [B, rows, ph, cols, pw] -> [B, rows, cols, ph, pw] -> [B, T, ph*pw]
        let h = tape.reshape(x, &[batch, rows, ph, cols, pw])?;
        let h = tape.permute(h, &[0, 1, 3, 2, 4])?;
        let h = tape.reshape(h, &[batch, rows * cols, ph * pw])?;
        let h = tape.dense(h, params[0], params[1])?;
        let h = tape.add(h, pe)?;
        let mut h = drop(tape, h)?;

        for b in 0..self.encoder_blocks {
            let p = &params[2 + 16 * b..2 + 16 * (b + 1)];
            let n = tape.layer_norm(h, p[0], p[1], LN_EPS)?;
            let q = tape.dense(n, p[2], p[3])?;
            let k = tape.dense(n, p[4], p[5])?;
            let v = tape.dense(n, p[6], p[7])?;
            let a = tape.scaled_dot_product_attention(q, k, v, self.heads)?;
            let a = tape.dense(a, p[8], p[9])?;
            let a = drop(tape, a)?;
            h = tape.add(h, a)?;

            let n = tape.layer_norm(h, p[10], p[11], LN_EPS)?;
            let f = tape.dense(n, p[12], p[13])?;
            let f = tape.relu(f);
            let f = tape.dense(f, p[14], p[15])?;
            let f = drop(tape, f)?;
            h = tape.add(h, f)?;
        }

        let pooled = tape.mean(h, 1)?;
        let last = params.len();
        tape.dense(pooled, params[last - 2], params[last - 1])
    }
}

/// Fixed 2D sinusoidal embedding for a `rows x cols` grid, `[rows*cols, dim]`.
///
/// The first half of each vector encodes the row index and the second half the
/// column index, each as interleaved `sin(p w_i), cos(p w_i)` pairs with
/// `w_i = 10000^(-2i / (dim/2))`. `dim` must be a multiple of 4.
pub fn sinusoidal_2d(rows: usize, cols: usize, dim: usize) -> Tensor {
    assert!(dim % 4 == 0, "embedding dimension must be a multiple of 4");
    let half = dim / 2;
    let mut data = vec![0.0; rows * cols * dim];
    for r in 0..rows {
        for c in 0..cols {
            let row = &mut data[(r * cols + c) * dim..(r * cols + c + 1) * dim];
            for (offset, pos) in [(0, r), (half, c)] {
                for i in 0..half / 2 {
                    let w = 10000f64.powf(-((2 * i) as f64) / half as f64);
                    let angle = pos as f64 * w;
                    row[offset + 2 * i] = angle.sin();
                    row[offset + 2 * i + 1] = angle.cos();
                }
            }
        }
    }
    Tensor::new(vec![rows * cols, dim], data).expect("shape and data agree")
}
