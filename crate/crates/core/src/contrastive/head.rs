use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{encode, init_weights, EncoderConfig, WeightSpec};
use crate::ops;
use crate::params::ParameterSet;
use crate::tensor::{Real, Tensor};

pub const HEAD_PREFIX: &str = "head.";

/// Two-layer projection `z = W2^T relu(W1^T h)` without biases, stored
/// row-major so a batch `H` maps to `relu(H W1) W2`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionHead<T: Real = f32> {
    pub w1: Tensor<T>,
    pub w2: Tensor<T>,
}

impl<T: Real> ProjectionHead<T> {
    pub fn new(w1: Tensor<T>, w2: Tensor<T>) -> Result<Self> {
        if w1.rank() != 2 || w2.rank() != 2 || w1.shape()[1] != w2.shape()[0] {
            return Err(Error::Shape {
                op: "projection head",
                lhs: w1.shape().to_vec(),
                rhs: w2.shape().to_vec(),
            });
        }
        Ok(Self { w1, w2 })
    }

    pub fn from_params(params: &ParameterSet<T>) -> Result<Self> {
        Self::new(params.value("head.w1")?.clone(), params.value("head.w2")?.clone())
    }

    pub fn input_dim(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.w2.shape()[1]
    }

    /// Projects a single feature vector.
    pub fn project(&self, h: &Tensor<T>) -> Result<Tensor<T>> {
        if h.len() != self.input_dim() {
            return Err(Error::Shape {
                op: "project",
                lhs: h.shape().to_vec(),
                rhs: self.w1.shape().to_vec(),
            });
        }
        let row = h.reshape(&[1, h.len()])?;
        let hidden = ops::relu(&ops::matmul(&row, &self.w1)?);
        let z = ops::matmul(&hidden, &self.w2)?;
        z.reshape(&[self.output_dim()])
    }
}

/// Records the projection head on `tape` for a `[B, dim_h]` batch.
pub fn project_on_tape<T: Real>(tape: &mut Tape<T>, params: &ParameterSet<T>, h: Var) -> Result<Var> {
    let w1 = tape.param(params, "head.w1")?;
    let hidden = tape.matmul(h, w1)?;
    let hidden = tape.relu(hidden)?;
    let w2 = tape.param(params, "head.w2")?;
    tape.matmul(hidden, w2)
}

/// Encoder plus projection head.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub head_hidden: usize,
    pub proj_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            head_hidden: 128,
            proj_dim: 64,
        }
    }
}

impl ModelConfig {
    pub fn head_weights(&self) -> Vec<WeightSpec> {
        let dim_h = self.encoder.embed_dim;
        vec![
            WeightSpec {
                name: "head.w1".into(),
                shape: vec![dim_h, self.head_hidden],
                fan_in: dim_h,
            },
            WeightSpec {
                name: "head.w2".into(),
                shape: vec![self.head_hidden, self.proj_dim],
                fan_in: self.head_hidden,
            },
        ]
    }

    pub fn weights(&self) -> Result<Vec<WeightSpec>> {
        if self.head_hidden == 0 || self.proj_dim == 0 {
            return Err(Error::InvalidArgument(
                "projection head extents must be positive".into(),
            ));
        }
        let mut w = self.encoder.weights()?;
        w.extend(self.head_weights());
        Ok(w)
    }

    /// He-initialized encoder and head.
    pub fn init<T: Real>(&self, seed: u64) -> Result<ParameterSet<T>> {
        init_weights(&self.weights()?, seed)
    }

    /// `[B, C, H, W]` -> `[B, proj_dim]`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, params: &ParameterSet<T>, x: Var) -> Result<Var> {
        let h = encode(tape, params, &self.encoder, x)?;
        project_on_tape(tape, params, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Philox;

    fn eye(n: usize) -> Tensor<f64> {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data_mut()[i * n + i] = 1.0;
        }
        t
    }

    #[test]
    fn identity_weights_pass_positive_input() {
        let head = ProjectionHead::new(eye(3), eye(3)).unwrap();
        let h = Tensor::from_f64(&[3], &[0.5, 2.0, 1.0]).unwrap();
        assert_eq!(head.project(&h).unwrap(), h);
        let zero = Tensor::zeros(&[3]);
        assert_eq!(head.project(&zero).unwrap(), zero);
    }

    #[test]
    fn matches_explicit_two_matrix_script() {
        let mut rng = Philox::new(21);
        let mut rand = |n: usize| (0..n).map(|_| rng.normal()).collect::<Vec<f64>>();
        let (w1, w2, h) = (rand(32), rand(24), rand(4));
        let head = ProjectionHead::new(
            Tensor::from_f64(&[4, 8], &w1).unwrap(),
            Tensor::from_f64(&[8, 3], &w2).unwrap(),
        )
        .unwrap();
        let z: Tensor<f64> = head.project(&Tensor::from_f64(&[4], &h).unwrap()).unwrap();

        let hidden: Vec<f64> = (0..8)
            .map(|j| (0..4).map(|i| h[i] * w1[i * 8 + j]).sum::<f64>().max(0.0))
            .collect();
        for o in 0..3 {
            let e: f64 = (0..8).map(|j| hidden[j] * w2[j * 3 + o]).sum();
            assert!((z.data()[o] - e).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let head = ProjectionHead::new(eye(3), eye(3)).unwrap();
        assert!(head.project(&Tensor::zeros(&[4])).is_err());
        assert!(ProjectionHead::new(eye(3), eye(2)).is_err());
    }
}
