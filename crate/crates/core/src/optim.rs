use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::rng::Philox;
use crate::tensor::{Real, Tensor};

/// SGD with classical momentum and coupled L2 weight decay, plus a step
/// learning-rate schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// `(epoch, multiplier)` pairs; the multiplier applies from that epoch on.
    pub schedule: Vec<(usize, f64)>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.03,
            momentum: 0.9,
            weight_decay: 1e-4,
            schedule: vec![(120, 0.1), (160, 0.1)],
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        // lr = 0 is accepted so that frozen-weight runs can be expressed.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        for w in self.schedule.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidArgument(
                    "schedule epochs must be strictly increasing".into(),
                ));
            }
        }
        if self.schedule.iter().any(|&(_, m)| !(m > 0.0)) {
            return Err(Error::InvalidArgument(
                "schedule multipliers must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Base rate times every multiplier whose epoch is `<= epoch`.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.schedule
            .iter()
            .filter(|&&(e, _)| e <= epoch)
            .fold(self.learning_rate, |lr, &(_, m)| lr * m)
    }
}

/// `v <- momentum v + (g + wd theta)`, `theta <- theta - lr v`, then zero `g`.
pub fn sgd_step<T: Real>(params: &mut ParameterSet<T>, cfg: &SgdConfig, lr: f64) {
    let (lr, mu, wd) = (T::of(lr), T::of(cfg.momentum), T::of(cfg.weight_decay));
    for (_, p) in params.iter_mut() {
        let theta = p.value.data_mut();
        let v = p.velocity.data_mut();
        let g = p.grad.data();
        for i in 0..theta.len() {
            v[i] = mu * v[i] + (g[i] + wd * theta[i]);
            theta[i] = theta[i] - lr * v[i];
        }
    }
    params.zero_grads();
}

/// He-normal initialization: `N(0, 2 / fan_in)`.
pub fn he_init<T: Real>(shape: &[usize], fan_in: usize, seed: u64, stream: u64) -> Result<Tensor<T>> {
    if fan_in == 0 {
        return Err(Error::InvalidArgument("fan_in must be positive".into()));
    }
    let std = (2.0 / fan_in as f64).sqrt();
    let mut rng = Philox::with_stream(seed, stream);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.normal() * std)).collect();
    Tensor::new(shape.to_vec(), data)
}
