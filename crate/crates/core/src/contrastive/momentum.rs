use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::tensor::Real;

/// Query parameters (trained by gradient) and key parameters (moving
/// average of the query side).
#[derive(Clone, Debug, PartialEq)]
pub struct MomentumPair<T: Real = f32> {
    pub theta_q: ParameterSet<T>,
    pub theta_k: ParameterSet<T>,
    pub m: f64,
}

impl<T: Real> MomentumPair<T> {
    pub fn new(theta_q: ParameterSet<T>, theta_k: ParameterSet<T>, m: f64) -> Result<Self> {
        theta_q.check_compatible(&theta_k)?;
        if !(0.0..=1.0).contains(&m) {
            return Err(Error::InvalidArgument(format!(
                "momentum coefficient must lie in [0, 1], got {m}"
            )));
        }
        Ok(Self {
            theta_q,
            theta_k,
            m,
        })
    }

    /// Key side starts as an exact copy of the query side.
    pub fn from_query(theta_q: ParameterSet<T>, m: f64) -> Result<Self> {
        let theta_k = theta_q.clone();
        Self::new(theta_q, theta_k, m)
    }

    /// `theta_k <- m theta_k + (1 - m) theta_q`, elementwise. The query
    /// side is untouched.
    pub fn momentum_update(&mut self) -> Result<()> {
        self.theta_q.check_compatible(&self.theta_k)?;
        if self.m == 1.0 {
            return Ok(());
        }
        let m = T::of(self.m);
        let one_minus = T::of(1.0 - self.m);
        for (name, pk) in self.theta_k.iter_mut() {
            let q = self.theta_q.value(name)?.data();
            let k = pk.value.data_mut();
            if self.m == 0.0 {
                k.copy_from_slice(q);
            } else {
                for (kv, &qv) in k.iter_mut().zip(q) {
                    *kv = m * *kv + one_minus * qv;
                }
            }
        }
        Ok(())
    }
}
