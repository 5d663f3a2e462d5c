//! Central finite-difference checks for every differentiable operation.
//!
//! Each instance draws random inputs, reduces the op output to a scalar with
//! fixed random weights, and compares the tape gradient of every input entry
//! against `(f(x+h) - f(x-h)) / 2h`. The error of one entry is
//! `|a - n| / max(1, |a|, |n|)`.
//!
//! Entries whose perturbation flips the sign of any ReLU input straddle a
//! kink; they are skipped and counted.

use crate::autodiff::{Tape, Var};
use crate::contrastive::{info_nce_rows, nt_xent_rows, KeyQueue};
use crate::error::{Error, Result};
use crate::fewshot::{episode_loss_rows, Distance, LossForm};
use crate::rng::{purpose, Philox};
use crate::tensor::{Real, Tensor};

pub const OPS: &[&str] = &[
    "matmul",
    "relu",
    "conv2d",
    "avgpool2d",
    "reshape",
    "l2_normalize",
    "dot",
    "weighted_sum",
    "scale",
    "nt_xent",
    "info_nce",
    "projection_head",
    "encoder_composite",
    "meta_loss[softmax-nll]",
    "meta_loss[nearest-rival]",
];

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub instances: usize,
    pub tolerance: f64,
    /// Test hook: corrupts the analytic gradient of the named op.
    pub fault: Option<String>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            instances: 20,
            tolerance: 1e-3,
            fault: None,
        }
    }
}

impl GradcheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.instances == 0 {
            return Err(Error::Config("gradcheck.instances must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!(
                "gradcheck.tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if let Some(f) = &self.fault {
            if !OPS.contains(&f.as_str()) {
                return Err(Error::Config(format!("gradcheck.fault names unknown op `{f}`")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpCheck {
    pub op: &'static str,
    pub precision: &'static str,
    pub instances: usize,
    pub entries: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

/// Step size used for `T`.
pub fn step<T: Real>() -> f64 {
    if T::NAME == "f64" {
        1e-5
    } else {
        1e-3
    }
}

type Build<T> = dyn Fn(&mut Tape<T>, &[Var]) -> Result<Var>;

struct Stats {
    entries: usize,
    skipped: usize,
    max_err: f64,
}

fn scalar_of<T: Real>(tape: &mut Tape<T>, out: Var, weights: &Tensor<T>) -> Result<Var> {
    if tape.value(out).is_scalar() {
        Ok(out)
    } else {
        tape.weighted_sum(out, weights.clone())
    }
}

/// The reduction runs in `f64` so only the op itself contributes rounding.
fn forward<T: Real>(inputs: &[Tensor<T>], build: &Build<T>, weights: &Tensor<T>) -> Result<(f64, Vec<bool>)> {
    let mut tape = Tape::new();
    let vars = inputs.iter().map(|x| tape.input(x.clone())).collect::<Result<Vec<_>>>()?;
    let out = build(&mut tape, &vars)?;
    let y = tape.value(out);
    let value = if y.is_scalar() {
        y.data()[0].f64()
    } else {
        y.data().iter().zip(weights.data()).map(|(a, w)| a.f64() * w.f64()).sum()
    };
    Ok((value, tape.relu_signature()))
}

fn check_instance<T: Real>(
    inputs: &[Tensor<T>],
    build: &Build<T>,
    rng: &mut Philox,
    corrupt: bool,
    stats: &mut Stats,
) -> Result<()> {
    let mut tape = Tape::new();
    let vars = inputs.iter().map(|x| tape.input(x.clone())).collect::<Result<Vec<_>>>()?;
    let out = build(&mut tape, &vars)?;
    let shape = tape.value(out).shape().to_vec();
    let n: usize = shape.iter().product();
    let weights = Tensor::new(shape, (0..n).map(|_| T::of(rng.uniform(-1.0, 1.0))).collect())?;
    let l = scalar_of(&mut tape, out, &weights)?;
    let signature = tape.relu_signature();
    let grads = tape.gradients(l)?;

    let h = step::<T>();
    for (i, x) in inputs.iter().enumerate() {
        let mut analytic: Vec<f64> = match grads.get(vars[i]) {
            Some(g) => g.data().iter().map(|v| v.f64()).collect(),
            None => vec![0.0; x.len()],
        };
        if corrupt && i == 0 {
            analytic[0] += 1.0;
        }
        for j in 0..x.len() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            let xj = x.data()[j];
            plus[i].data_mut()[j] = T::of(xj.f64() + h);
            minus[i].data_mut()[j] = T::of(xj.f64() - h);
            let hp = plus[i].data()[j].f64() - xj.f64();
            let hm = xj.f64() - minus[i].data()[j].f64();
            let (fp, sp) = forward(&plus, build, &weights)?;
            let (fm, sm) = forward(&minus, build, &weights)?;
            if sp != signature || sm != signature {
                stats.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (hp + hm);
            let a = analytic[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            stats.max_err = stats.max_err.max(err);
            stats.entries += 1;
        }
    }
    Ok(())
}

fn normal<T: Real>(rng: &mut Philox, shape: &[usize], scale: f64) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| T::of(rng.normal() * scale)).collect())
        .expect("shape matches length")
}

/// Normal draws pushed at least `gap` away from zero.
fn off_zero<T: Real>(rng: &mut Philox, shape: &[usize], gap: f64) -> Tensor<T> {
    normal::<T>(rng, shape, 1.0).map(|v| {
        let v = v.f64();
        T::of(v.signum() * (v.abs() + gap))
    })
}

fn fused_episode<T: Real>(
    tape: &mut Tape<T>,
    v: &[Var],
    ql: Vec<usize>,
    sl: Vec<usize>,
    ways: usize,
    distance: Distance,
    form: LossForm,
) -> Result<Var> {
    tape.fused_scalar("meta_loss", &[v[0], v[1]], move |t| {
        let (l, dq, ds) = episode_loss_rows(t[0], &ql, t[1], &sl, ways, distance, form)?;
        Ok((l, vec![dq, ds]))
    })
}

/// Random inputs and the graph builder for instance `k` of `op`.
fn instance<T: Real>(op: &str, k: usize, rng: &mut Philox) -> Result<(Vec<Tensor<T>>, Box<Build<T>>)> {
    let tau = [0.5, 0.2][k % 2];
    let distance = [Distance::Euclidean, Distance::SquaredEuclidean][k % 2];
    Ok(match op {
        "matmul" => (
            vec![normal(rng, &[3, 4], 1.0), normal(rng, &[4, 2], 1.0)],
            Box::new(|t, v| t.matmul(v[0], v[1])),
        ),
        "relu" => (vec![off_zero(rng, &[12], 0.05)], Box::new(|t, v| t.relu(v[0]))),
        "conv2d" => {
            let stride = 1 + k % 2;
            (
                vec![normal(rng, &[2, 5, 5], 1.0), normal(rng, &[3, 2, 3, 3], 0.5)],
                Box::new(move |t, v| t.conv2d(v[0], v[1], stride)),
            )
        }
        "avgpool2d" => (vec![normal(rng, &[2, 4, 4], 1.0)], Box::new(|t, v| t.avgpool2d(v[0], 2))),
        "reshape" => (vec![normal(rng, &[2, 3], 1.0)], Box::new(|t, v| t.reshape(v[0], &[3, 2]))),
        "l2_normalize" => (vec![normal(rng, &[3, 4], 1.0)], Box::new(|t, v| t.l2_normalize(v[0]))),
        "dot" => (
            vec![normal(rng, &[5], 1.0), normal(rng, &[5], 1.0)],
            Box::new(|t, v| t.dot(v[0], v[1])),
        ),
        "weighted_sum" => {
            let w: Tensor<T> = normal(rng, &[6], 1.0);
            (vec![normal(rng, &[6], 1.0)], Box::new(move |t, v| t.weighted_sum(v[0], w.clone())))
        }
        "scale" => {
            let c = T::of(rng.uniform(-2.0, 2.0));
            (vec![normal(rng, &[4], 1.0)], Box::new(move |t, v| t.scale(v[0], c)))
        }
        "nt_xent" => (
            vec![normal(rng, &[4, 5], 1.0)],
            Box::new(move |t, v| {
                t.fused_scalar("nt_xent", &[v[0]], |z| {
                    let (l, g) = nt_xent_rows(z[0], &[1, 0, 3, 2], tau)?;
                    Ok((l, vec![g]))
                })
            }),
        ),
        "info_nce" => {
            let keys: Tensor<T> = normal(rng, &[3, 5], 1.0);
            let mut queue = KeyQueue::new(6)?;
            queue.enqueue_batch(&normal::<T>(rng, &[6, 5], 1.0))?;
            (
                vec![normal(rng, &[3, 5], 1.0)],
                Box::new(move |t, v| {
                    t.fused_scalar("info_nce", &[v[0]], |q| {
                        let out = info_nce_rows(q[0], &keys, &queue, tau)?;
                        Ok((out.loss, vec![out.grad]))
                    })
                }),
            )
        }
        "projection_head" => (
            vec![normal(rng, &[3, 6], 1.0), normal(rng, &[6, 5], 0.6), normal(rng, &[5, 4], 0.6)],
            Box::new(|t, v| {
                let a = t.matmul(v[0], v[1])?;
                let a = t.relu(a)?;
                t.matmul(a, v[2])
            }),
        ),
        "encoder_composite" => (
            vec![
                normal(rng, &[4, 1, 10, 10], 1.0),
                normal(rng, &[3, 1, 3, 3], 0.5),
                normal(rng, &[4, 3, 3, 3], 0.3),
                normal(rng, &[4, 3], 0.8),
            ],
            Box::new(move |t, v| {
                let mut h = t.conv2d(v[0], v[1], 1)?;
                h = t.relu(h)?;
                h = t.avgpool2d(h, 2)?;
                h = t.conv2d(h, v[2], 1)?;
                h = t.relu(h)?;
                h = t.avgpool2d(h, 2)?;
                let flat = t.reshape(h, &[4, 4])?;
                let z = t.matmul(flat, v[3])?;
                t.fused_scalar("nt_xent", &[z], |z| {
                    let (l, g) = nt_xent_rows(z[0], &[1, 0, 3, 2], tau)?;
                    Ok((l, vec![g]))
                })
            }),
        ),
        "meta_loss[softmax-nll]" => (
            vec![normal(rng, &[2, 4], 1.0), normal(rng, &[4, 4], 1.0)],
            Box::new(move |t, v| fused_episode(t, v, vec![0, 1], vec![0, 0, 1, 1], 2, distance, LossForm::SoftmaxNll)),
        ),
        "meta_loss[nearest-rival]" => (
            vec![normal(rng, &[3, 4], 1.0), normal(rng, &[6, 4], 1.0)],
            Box::new(move |t, v| {
                fused_episode(t, v, vec![0, 1, 2], vec![0, 0, 1, 1, 2, 2], 3, distance, LossForm::NearestRival)
            }),
        ),
        other => return Err(Error::InvalidArgument(format!("unknown op `{other}`"))),
    })
}

/// Checks one op over `cfg.instances` random instances.
pub fn check_op<T: Real>(op: &'static str, cfg: &GradcheckConfig, seed: u64) -> Result<OpCheck> {
    let index = OPS
        .iter()
        .position(|&o| o == op)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown op `{op}`")))?;
    let corrupt = cfg.fault.as_deref() == Some(op);
    let mut stats = Stats {
        entries: 0,
        skipped: 0,
        max_err: 0.0,
    };
    for k in 0..cfg.instances {
        let mut rng = Philox::for_tags(seed, &[purpose::GRADCHECK, index as u64, k as u64]);
        let (inputs, build) = instance::<T>(op, k, &mut rng)?;
        check_instance(&inputs, &*build, &mut rng, corrupt, &mut stats)?;
    }
    Ok(OpCheck {
        op,
        precision: T::NAME,
        instances: cfg.instances,
        entries: stats.entries,
        skipped: stats.skipped,
        max_rel_err: stats.max_err,
        passed: stats.entries > 0 && stats.max_err < cfg.tolerance,
    })
}

pub fn run_suite<T: Real>(cfg: &GradcheckConfig, seed: u64) -> Result<Vec<OpCheck>> {
    cfg.validate()?;
    OPS.iter().map(|op| check_op::<T>(op, cfg, seed)).collect()
}
