use serde::{Deserialize, Serialize};

use super::{init_uniform, named, InputShape, SpecError};
use crate::autodiff::{NamedTensor, Tape, Tensor, TensorError, Var};
use crate::rng::Rng;

/// One layer of a [`CnnSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Conv1d {
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    MaxPool1d {
        width: usize,
        stride: usize,
    },
    Relu,
    Dropout {
        rate: f64,
    },
    Flatten,
    Dense {
        out_features: usize,
    },
}

fn one() -> usize {
    1
}

/// Activation shape between layers (batch axis omitted).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feature {
    Seq { channels: usize, length: usize },
    Flat(usize),
}

/// Ordered 1D-CNN layer stack ending in `dense(classes)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnSpec {
    pub layers: Vec<Layer>,
    pub classes: usize,
}

impl CnnSpec {
    /// Four-conv reference network totalling 50,584 trainable parameters on
    /// [`super::ULTRA_PRO_INPUT`] with six classes.
    ///
    /// Widths 8/20/64/122, kernels 8/7/7/5, a stride-8 first layer and
    /// max-pooling bring the 8 x 960 input down to a 122-wide feature vector.
    pub fn udacnn_ref(classes: usize) -> Self {
        use Layer::*;
        let conv = |out_channels, kernel, stride| Conv1d {
            out_channels,
            kernel,
            stride,
            padding: 0,
        };
        Self {
            layers: vec![
                conv(8, 8, 8),
                Relu,
                MaxPool1d { width: 4, stride: 4 },
                conv(20, 7, 1),
                Relu,
                MaxPool1d { width: 2, stride: 2 },
                conv(64, 7, 1),
                Relu,
                conv(122, 5, 1),
                Relu,
                MaxPool1d { width: 2, stride: 2 },
                Flatten,
                Dropout { rate: 0.1 },
                Dense {
                    out_features: classes,
                },
            ],
            classes,
        }
    }

    /// Output feature shape after every layer; fails at the first layer that
    /// cannot accept its input.
    pub fn layer_shapes(&self, input: InputShape) -> Result<Vec<Feature>, SpecError> {
        let err = |index: usize, msg: String| SpecError::Layer { index, msg };
        if self.classes == 0 {
            return Err(SpecError::Constraint("classes must be positive".into()));
        }
        if input.channels == 0 || input.length == 0 {
            return Err(SpecError::Constraint(format!("empty input shape {input:?}")));
        }
        let mut cur = Feature::Seq {
            channels: input.channels,
            length: input.length,
        };
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match (layer, cur) {
                (
                    Layer::Conv1d {
                        out_channels,
                        kernel,
                        stride,
                        padding,
                    },
                    Feature::Seq { length, .. },
                ) => {
                    if *out_channels == 0 || *kernel == 0 || *stride == 0 {
                        return Err(err(i, "conv1d sizes must be positive".into()));
                    }
                    if length + 2 * padding < *kernel {
                        return Err(err(
                            i,
                            format!("kernel {kernel} exceeds padded length {}", length + 2 * padding),
                        ));
                    }
                    Feature::Seq {
                        channels: *out_channels,
                        length: (length + 2 * padding - kernel) / stride + 1,
                    }
                }
                (Layer::MaxPool1d { width, stride }, Feature::Seq { channels, length }) => {
                    if *width == 0 || *stride == 0 {
                        return Err(err(i, "max_pool1d sizes must be positive".into()));
                    }
                    if *width > length {
                        return Err(err(i, format!("pool width {width} exceeds length {length}")));
                    }
                    Feature::Seq {
                        channels,
                        length: (length - width) / stride + 1,
                    }
                }
                (Layer::Conv1d { .. } | Layer::MaxPool1d { .. }, Feature::Flat(_)) => {
                    return Err(err(i, "sequence layer after flatten".into()));
                }
                (Layer::Relu, f) => f,
                (Layer::Dropout { rate }, f) => {
                    if !(0.0..1.0).contains(rate) {
                        return Err(err(i, format!("dropout rate {rate} outside [0, 1)")));
                    }
                    f
                }
                (Layer::Flatten, Feature::Seq { channels, length }) => Feature::Flat(channels * length),
                (Layer::Flatten, Feature::Flat(_)) => {
                    return Err(err(i, "input is already flat".into()));
                }
                (Layer::Dense { out_features }, Feature::Flat(_)) => {
                    if *out_features == 0 {
                        return Err(err(i, "dense width must be positive".into()));
                    }
                    Feature::Flat(*out_features)
                }
                (Layer::Dense { .. }, Feature::Seq { .. }) => {
                    return Err(err(i, "dense requires a flatten first".into()));
                }
            };
            shapes.push(cur);
        }
        match self.layers.last() {
            Some(Layer::Dense { out_features }) if *out_features == self.classes => Ok(shapes),
            _ => Err(err(
                self.layers.len().saturating_sub(1),
                format!("final layer must be dense({})", self.classes),
            )),
        }
    }

    pub(crate) fn init_params(
        &self,
        input: InputShape,
        rng: &mut Rng,
    ) -> Result<Vec<NamedTensor>, SpecError> {
        let shapes = self.layer_shapes(input)?;
        let mut params = Vec::new();
        let mut prev = Feature::Seq {
            channels: input.channels,
            length: input.length,
        };
        for (i, layer) in self.layers.iter().enumerate() {
            match (layer, prev) {
                (
                    Layer::Conv1d {
                        out_channels,
                        kernel,
                        ..
                    },
                    Feature::Seq { channels, .. },
                ) => {
                    let fan_in = channels * kernel;
                    params.push(named(
                        format!("layers.{i}.weight"),
                        init_uniform(&[*out_channels, channels, *kernel], fan_in, rng),
                    ));
                    params.push(named(format!("layers.{i}.bias"), Tensor::zeros(&[*out_channels])));
                }
                (Layer::Dense { out_features }, Feature::Flat(n)) => {
                    params.push(named(
                        format!("layers.{i}.weight"),
                        init_uniform(&[n, *out_features], n, rng),
                    ));
                    params.push(named(format!("layers.{i}.bias"), Tensor::zeros(&[*out_features])));
                }
                _ => {}
            }
            prev = shapes[i];
        }
        Ok(params)
    }

    pub(crate) fn forward(
        &self,
        tape: &mut Tape,
        params: &[Var],
        x: Var,
        mut dropout: Option<&mut Rng>,
    ) -> Result<Var, TensorError> {
        let mut p = params.iter().copied();
        let mut next = |op: &'static str| {
            p.next()
                .ok_or_else(|| TensorError::InvalidArgument { op, msg: "missing parameter".into() })
        };
        let mut h = x;
        for layer in &self.layers {
            h = match layer {
                Layer::Conv1d {
                    stride, padding, ..
                } => {
                    let (w, b) = (next("conv1d")?, next("conv1d")?);
                    tape.conv1d(h, w, Some(b), *stride, *padding)?
                }
                Layer::MaxPool1d { width, stride } => tape.max_pool1d(h, *width, *stride)?,
                Layer::Relu => tape.relu(h),
                Layer::Dropout { rate } => match dropout.as_deref_mut() {
                    Some(r) => tape.dropout(h, *rate, true, r)?,
                    None => h,
                },
                Layer::Flatten => {
                    let s = tape.shape(h);
                    let (batch, rest) = (s[0], s[1..].iter().product::<usize>());
                    tape.reshape(h, &[batch, rest])?
                }
                Layer::Dense { .. } => {
                    let (w, b) = (next("dense")?, next("dense")?);
                    tape.dense(h, w, b)?
                }
            };
        }
        Ok(h)
    }
}
