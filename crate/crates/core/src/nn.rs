//! The small encoder that stands in for a full ResNet.
//!
//! Parameters live in a [`ParameterSet`] under the `enc.` prefix so that the
//! query and key encoders, checkpoints and the few-shot stage can all share
//! one naming scheme. No layer carries a bias.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::optim::he_init;
use crate::params::ParameterSet;
use crate::rng::{purpose, stream_id};
use crate::tensor::{Real, Tensor};

pub const ENCODER_PREFIX: &str = "enc.";

#[derive(Clone, Debug, PartialEq)]
pub enum EncoderArch {
    /// `conv -> relu -> avgpool` blocks, then flatten and a dense layer.
    Conv {
        filters: Vec<usize>,
        kernels: Vec<usize>,
        pool: usize,
        /// Average the last feature map over all positions before the
        /// dense layer instead of flattening it.
        global_pool: bool,
    },
    /// Flatten, one hidden ReLU layer, then the output layer.
    Mlp { hidden: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub channels: usize,
    pub image_size: usize,
    pub arch: EncoderArch,
    pub embed_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            channels: 1,
            image_size: 32,
            arch: EncoderArch::Conv {
                filters: vec![8, 16],
                kernels: vec![3, 4],
                pool: 2,
                global_pool: false,
            },
            embed_dim: 64,
        }
    }
}

/// Name, shape and fan-in of one weight.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
}

impl EncoderConfig {
    /// Weight layout implied by the configuration; fails when the spatial
    /// extents do not chain.
    pub fn weights(&self) -> Result<Vec<WeightSpec>> {
        if self.channels == 0 || self.image_size == 0 || self.embed_dim == 0 {
            return Err(Error::InvalidArgument(
                "encoder extents must be positive".into(),
            ));
        }
        let mut out = Vec::new();
        match &self.arch {
            EncoderArch::Conv {
                filters,
                kernels,
                pool,
                global_pool,
            } => {
                if filters.is_empty() || filters.len() != kernels.len() || *pool == 0 {
                    return Err(Error::InvalidArgument(
                        "conv encoder needs one kernel size per filter count and a positive pool"
                            .into(),
                    ));
                }
                let (mut c, mut s) = (self.channels, self.image_size);
                for (i, (&f, &k)) in filters.iter().zip(kernels).enumerate() {
                    if k == 0 || k > s || f == 0 {
                        return Err(Error::InvalidArgument(format!(
                            "conv layer {i}: kernel {k} does not fit a {s}x{s} input"
                        )));
                    }
                    let conv_out = s - k + 1;
                    if conv_out % pool != 0 {
                        return Err(Error::InvalidArgument(format!(
                            "conv layer {i}: output extent {conv_out} is not divisible by pool {pool}"
                        )));
                    }
                    out.push(WeightSpec {
                        name: format!("enc.conv{i}"),
                        shape: vec![f, c, k, k],
                        fan_in: c * k * k,
                    });
                    c = f;
                    s = conv_out / pool;
                }
                let feat = if *global_pool { c } else { c * s * s };
                out.push(WeightSpec {
                    name: "enc.dense".into(),
                    shape: vec![feat, self.embed_dim],
                    fan_in: feat,
                });
            }
            EncoderArch::Mlp { hidden } => {
                let input = self.channels * self.image_size * self.image_size;
                out.push(WeightSpec {
                    name: "enc.fc0".into(),
                    shape: vec![input, *hidden],
                    fan_in: input,
                });
                out.push(WeightSpec {
                    name: "enc.fc1".into(),
                    shape: vec![*hidden, self.embed_dim],
                    fan_in: *hidden,
                });
            }
        }
        Ok(out)
    }

    pub fn init<T: Real>(&self, seed: u64) -> Result<ParameterSet<T>> {
        init_weights(&self.weights()?, seed)
    }
}

pub(crate) fn init_weights<T: Real>(specs: &[WeightSpec], seed: u64) -> Result<ParameterSet<T>> {
    let mut ps = ParameterSet::new();
    for w in specs {
        let stream = stream_id(&[purpose::INIT, name_tag(&w.name)]);
        ps.insert(w.name.clone(), he_init(&w.shape, w.fan_in, seed, stream)?);
    }
    Ok(ps)
}

/// FNV-1a over the parameter name, giving every weight its own stream.
fn name_tag(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Records the encoder on `tape`. `x` is `[B, C, H, W]`; the result is
/// `[B, embed_dim]`.
pub fn encode<T: Real>(
    tape: &mut Tape<T>,
    params: &ParameterSet<T>,
    cfg: &EncoderConfig,
    x: Var,
) -> Result<Var> {
    let batch = tape.value(x).shape()[0];
    match &cfg.arch {
        EncoderArch::Conv {
            filters,
            pool,
            global_pool,
            ..
        } => {
            let mut h = x;
            for i in 0..filters.len() {
                let k = tape.param(params, &format!("enc.conv{i}"))?;
                h = tape.conv2d(h, k, 1)?;
                h = tape.relu(h)?;
                h = tape.avgpool2d(h, *pool)?;
            }
            if *global_pool {
                let side = tape.value(h).shape()[2];
                h = tape.avgpool2d(h, side)?;
            }
            let feat = tape.value(h).len() / batch;
            let flat = tape.reshape(h, &[batch, feat])?;
            let w = tape.param(params, "enc.dense")?;
            tape.matmul(flat, w)
        }
        EncoderArch::Mlp { .. } => {
            let feat = tape.value(x).len() / batch;
            let flat = tape.reshape(x, &[batch, feat])?;
            let w0 = tape.param(params, "enc.fc0")?;
            let h = tape.matmul(flat, w0)?;
            let h = tape.relu(h)?;
            let w1 = tape.param(params, "enc.fc1")?;
            tape.matmul(h, w1)
        }
    }
}

/// Encoder forward pass over a batch of images, no gradients kept.
pub fn encode_images(
    cfg: &EncoderConfig,
    params: &ParameterSet<f32>,
    images: &[&ImageTensor],
) -> Result<Tensor<f32>> {
    let mut tape = Tape::new();
    let x = tape.input(ImageTensor::batch(images)?)?;
    let h = encode(&mut tape, params, cfg, x)?;
    Ok(tape.value(h).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_conv_layout() {
        let w = EncoderConfig::default().weights().unwrap();
        let shapes: Vec<_> = w.iter().map(|w| (w.name.as_str(), w.shape.clone())).collect();
        assert_eq!(
            shapes,
            vec![
                ("enc.conv0", vec![8, 1, 3, 3]),
                ("enc.conv1", vec![16, 8, 4, 4]),
                ("enc.dense", vec![576, 64]),
            ]
        );
    }

    #[test]
    fn non_chaining_layout_rejected() {
        let cfg = EncoderConfig {
            arch: EncoderArch::Conv {
                filters: vec![8, 16],
                kernels: vec![3, 3],
                pool: 2,
                global_pool: false,
            },
            ..EncoderConfig::default()
        };
        assert!(cfg.weights().is_err());
    }

    #[test]
    fn encode_shapes_and_determinism() {
        for arch in [
            EncoderConfig::default().arch,
            EncoderArch::Mlp { hidden: 16 },
        ] {
            let cfg = EncoderConfig {
                arch,
                ..EncoderConfig::default()
            };
            let a: ParameterSet<f32> = cfg.init(5).unwrap();
            let b: ParameterSet<f32> = cfg.init(5).unwrap();
            assert!(a.bit_eq(&b));
            let mut tape = Tape::new();
            let x = tape.input(Tensor::full(&[3, 1, 32, 32], 0.5)).unwrap();
            let h = encode(&mut tape, &a, &cfg, x).unwrap();
            assert_eq!(tape.value(h).shape(), &[3, 64]);
        }
    }
}
