use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fewshot::episode::{Episode, LabeledSample};
use crate::image::ImageTensor;
use crate::nn::{encode_images, EncoderConfig};
use crate::ops::l2_normalize;
use crate::optim::SgdConfig;
use crate::params::ParameterSet;
use crate::tensor::{Real, Tensor};

/// Floor applied to the wrong-class distance inside the log of the
/// `nearest-rival` loss.
pub const RIVAL_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Distance {
    Euclidean,
    SquaredEuclidean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossForm {
    /// `-log p(y=m|q)`.
    SoftmaxNll,
    /// `d(q, c_m) + log d(q, c_m')` with `m'` the nearest wrong class.
    NearestRival,
}

impl FromStr for Distance {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Self::Euclidean),
            "squared-euclidean" => Ok(Self::SquaredEuclidean),
            _ => Err(Error::Config(format!(
                "unknown distance `{s}` (expected euclidean or squared-euclidean)"
            ))),
        }
    }
}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Euclidean => "euclidean",
            Self::SquaredEuclidean => "squared-euclidean",
        })
    }
}

impl FromStr for LossForm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax-nll" => Ok(Self::SoftmaxNll),
            "nearest-rival" => Ok(Self::NearestRival),
            _ => Err(Error::Config(format!(
                "unknown loss `{s}` (expected softmax-nll or nearest-rival)"
            ))),
        }
    }
}

impl fmt::Display for LossForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SoftmaxNll => "softmax-nll",
            Self::NearestRival => "nearest-rival",
        })
    }
}

impl Distance {
    fn eval(self, q: &[f64], c: &[f64]) -> f64 {
        let sq: f64 = q.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
        match self {
            Self::Euclidean => sq.sqrt(),
            Self::SquaredEuclidean => sq,
        }
    }

    /// `d` and `∂d/∂q`; the derivative with respect to `c` is its negation.
    /// At zero Euclidean distance the subgradient 0 is used.
    fn with_grad(self, q: &[f64], c: &[f64]) -> (f64, Vec<f64>) {
        let diff: Vec<f64> = q.iter().zip(c).map(|(a, b)| a - b).collect();
        let sq: f64 = diff.iter().map(|x| x * x).sum();
        match self {
            Self::SquaredEuclidean => (sq, diff.iter().map(|x| 2.0 * x).collect()),
            Self::Euclidean => {
                let d = sq.sqrt();
                if d == 0.0 {
                    (0.0, vec![0.0; diff.len()])
                } else {
                    (d, diff.iter().map(|x| x / d).collect())
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaConfig {
    pub ways: usize,
    pub shots: usize,
    pub episodes: usize,
    pub distance: Distance,
    pub loss: LossForm,
    /// Scale embeddings to unit length before prototypes and distances.
    pub normalize: bool,
    pub sgd: SgdConfig,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            ways: 2,
            shots: 1,
            episodes: 200,
            distance: Distance::Euclidean,
            loss: LossForm::SoftmaxNll,
            normalize: false,
            sgd: SgdConfig {
                learning_rate: 0.01,
                schedule: Vec::new(),
                ..SgdConfig::default()
            },
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ways < 2 {
            return Err(Error::Config(format!("meta.ways must be at least 2, got {}", self.ways)));
        }
        if self.shots == 0 {
            return Err(Error::Config("meta.shots must be at least 1".into()));
        }
        self.sgd.validate()
    }
}

/// Class centroids in embedding space.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeSet<T: Real = f32> {
    pub dim: usize,
    pub protos: BTreeMap<usize, Vec<T>>,
}

impl<T: Real> PrototypeSet<T> {
    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.protos.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.protos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.protos.is_empty()
    }

    fn as_f64(&self) -> Vec<(usize, Vec<f64>)> {
        self.protos
            .iter()
            .map(|(&c, v)| (c, v.iter().map(|x| x.f64()).collect()))
            .collect()
    }
}

/// Per-class mean of the given support embeddings.
pub fn prototypes_from_embeddings<T: Real>(support: &BTreeMap<usize, Vec<Vec<T>>>) -> Result<PrototypeSet<T>> {
    let dim = support
        .values()
        .flatten()
        .map(Vec::len)
        .next()
        .ok_or_else(|| Error::InvalidArgument("no support embeddings".into()))?;
    let mut protos = BTreeMap::new();
    for (&class, rows) in support {
        if rows.is_empty() {
            return Err(Error::InvalidArgument(format!("class {class} has no support embeddings")));
        }
        let mut acc = vec![0.0f64; dim];
        for r in rows {
            if r.len() != dim {
                return Err(Error::Shape {
                    op: "prototypes",
                    lhs: vec![dim],
                    rhs: vec![r.len()],
                });
            }
            for (a, x) in acc.iter_mut().zip(r) {
                *a += x.f64();
            }
        }
        let n = rows.len() as f64;
        let c: Vec<T> = acc.into_iter().map(|a| T::of(a / n)).collect();
        if c.iter().any(|x| !x.f64().is_finite()) {
            return Err(Error::NonFinite { op: "prototypes" });
        }
        protos.insert(class, c);
    }
    Ok(PrototypeSet { dim, protos })
}

/// The few-shot embedding `psi`: the encoder output, unit-normalized when
/// `meta.normalize` is set.
pub fn embed_images(
    enc_cfg: &EncoderConfig,
    encoder: &ParameterSet<f32>,
    meta: &MetaConfig,
    images: &[&ImageTensor],
) -> Result<Tensor<f32>> {
    let h = encode_images(enc_cfg, encoder, images)?;
    if meta.normalize {
        l2_normalize(&h)
    } else {
        Ok(h)
    }
}

/// Embeds each class's support images and averages them.
pub fn compute_prototypes(
    episode: &Episode,
    data: &[LabeledSample],
    encoder: &ParameterSet<f32>,
    enc_cfg: &EncoderConfig,
    meta: &MetaConfig,
) -> Result<PrototypeSet<f32>> {
    let mut support = BTreeMap::new();
    for (&class, members) in &episode.support {
        let images: Vec<_> = members.iter().map(|&i| &data[i].image).collect();
        let emb = embed_images(enc_cfg, encoder, meta, &images)?;
        support.insert(class, (0..emb.rows()).map(|r| emb.row(r).to_vec()).collect());
    }
    prototypes_from_embeddings(&support)
}

fn distances(q: &[f64], protos: &[(usize, Vec<f64>)], kind: Distance) -> Vec<f64> {
    protos.iter().map(|(_, c)| kind.eval(q, c)).collect()
}

fn softmax_neg(d: &[f64]) -> Vec<f64> {
    let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = d.iter().map(|x| (lo - x).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// `p(y=m|q)` as a softmax over negative distances.
pub fn class_posterior<T: Real>(
    query: &[T],
    protos: &PrototypeSet<T>,
    kind: Distance,
) -> Result<BTreeMap<usize, f64>> {
    check_query(query, protos)?;
    let q: Vec<f64> = query.iter().map(|x| x.f64()).collect();
    let p = protos.as_f64();
    let probs = softmax_neg(&distances(&q, &p, kind));
    Ok(p.iter().map(|(c, _)| *c).zip(probs).collect())
}

/// Class of the closest prototype, lowest id on ties.
pub fn nearest_prototype<T: Real>(query: &[T], protos: &PrototypeSet<T>, kind: Distance) -> Result<usize> {
    check_query(query, protos)?;
    let q: Vec<f64> = query.iter().map(|x| x.f64()).collect();
    let p = protos.as_f64();
    let d = distances(&q, &p, kind);
    Ok(p[argmin(&d)].0)
}

fn argmin(d: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in d.iter().enumerate() {
        if x < d[best] {
            best = i;
        }
    }
    best
}

fn check_query<T: Real>(query: &[T], protos: &PrototypeSet<T>) -> Result<()> {
    if protos.is_empty() {
        return Err(Error::InvalidArgument("prototype set is empty".into()));
    }
    if query.len() != protos.dim {
        return Err(Error::Shape {
            op: "class posterior",
            lhs: vec![query.len()],
            rhs: vec![protos.dim],
        });
    }
    Ok(())
}

/// Loss for one query given distances to every prototype, and `∂L/∂d`.
fn loss_from_distances(d: &[f64], target: usize, form: LossForm) -> (f64, Vec<f64>) {
    let mut g = vec![0.0; d.len()];
    match form {
        LossForm::SoftmaxNll => {
            let p = softmax_neg(d);
            for (j, pj) in p.iter().enumerate() {
                g[j] = if j == target { 1.0 - pj } else { -pj };
            }
            (-p[target].max(f64::MIN_POSITIVE).ln(), g)
        }
        LossForm::NearestRival => {
            let wrong = (0..d.len())
                .filter(|&j| j != target)
                .fold(None, |best: Option<usize>, j| match best {
                    Some(b) if d[b] <= d[j] => Some(b),
                    _ => Some(j),
                })
                .expect("at least two classes");
            g[target] = 1.0;
            let dw = if d[wrong] < RIVAL_EPS {
                log::warn!("wrong-class distance {} clamped to {RIVAL_EPS} in meta loss", d[wrong]);
                RIVAL_EPS
            } else {
                g[wrong] = 1.0 / d[wrong];
                d[wrong]
            };
            (d[target] + dw.ln(), g)
        }
    }
}

/// Loss of one query embedding against `protos` with true class `class`,
/// and its gradient with respect to the query.
pub fn meta_loss<T: Real>(
    query: &[T],
    protos: &PrototypeSet<T>,
    class: usize,
    cfg: &MetaConfig,
) -> Result<(T, Tensor<T>)> {
    check_query(query, protos)?;
    let p = protos.as_f64();
    let target = p
        .iter()
        .position(|(c, _)| *c == class)
        .ok_or_else(|| Error::InvalidArgument(format!("class {class} has no prototype")))?;
    if p.len() < 2 {
        return Err(Error::InvalidArgument("meta loss needs at least two prototypes".into()));
    }
    let q: Vec<f64> = query.iter().map(|x| x.f64()).collect();
    let parts: Vec<(f64, Vec<f64>)> = p.iter().map(|(_, c)| cfg.distance.with_grad(&q, c)).collect();
    let d: Vec<f64> = parts.iter().map(|(d, _)| *d).collect();
    let (loss, dl_dd) = loss_from_distances(&d, target, cfg.loss);
    let mut grad = vec![0.0f64; q.len()];
    for ((_, dd_dq), w) in parts.iter().zip(&dl_dd) {
        for (g, x) in grad.iter_mut().zip(dd_dq) {
            *g += w * x;
        }
    }
    Ok((T::of(loss), Tensor::vector(grad.into_iter().map(T::of).collect())))
}

/// Mean meta loss over a batch of query rows, with prototypes formed from
/// support rows. Labels are local class indices `0..ways`. Returns the loss
/// and gradients with respect to `queries` and `support`.
pub fn episode_loss_rows<T: Real>(
    queries: &Tensor<T>,
    query_labels: &[usize],
    support: &Tensor<T>,
    support_labels: &[usize],
    ways: usize,
    distance: Distance,
    form: LossForm,
) -> Result<(T, Tensor<T>, Tensor<T>)> {
    let dim = queries.cols();
    if support.cols() != dim || queries.rows() != query_labels.len() || support.rows() != support_labels.len() {
        return Err(Error::Shape {
            op: "episode loss",
            lhs: queries.shape().to_vec(),
            rhs: support.shape().to_vec(),
        });
    }
    if ways < 2 || query_labels.iter().chain(support_labels).any(|&l| l >= ways) {
        return Err(Error::InvalidArgument("episode labels must lie in 0..ways with ways >= 2".into()));
    }
    let mut counts = vec![0usize; ways];
    let mut protos = vec![vec![0.0f64; dim]; ways];
    for (r, &l) in support_labels.iter().enumerate() {
        counts[l] += 1;
        for (a, x) in protos[l].iter_mut().zip(support.row(r)) {
            *a += x.f64();
        }
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::InvalidArgument(format!("local class {c} has no support rows")));
    }
    for (p, &n) in protos.iter_mut().zip(&counts) {
        p.iter_mut().for_each(|x| *x /= n as f64);
    }

    let nq = queries.rows() as f64;
    let mut total = 0.0;
    let mut gq = vec![0.0f64; queries.len()];
    let mut gc = vec![vec![0.0f64; dim]; ways];
    for (r, &target) in query_labels.iter().enumerate() {
        let q: Vec<f64> = queries.row(r).iter().map(|x| x.f64()).collect();
        let parts: Vec<(f64, Vec<f64>)> = protos.iter().map(|c| distance.with_grad(&q, c)).collect();
        let d: Vec<f64> = parts.iter().map(|(d, _)| *d).collect();
        let (loss, dl_dd) = loss_from_distances(&d, target, form);
        total += loss;
        for (j, (_, dd_dq)) in parts.iter().enumerate() {
            let w = dl_dd[j] / nq;
            for k in 0..dim {
                gq[r * dim + k] += w * dd_dq[k];
                gc[j][k] -= w * dd_dq[k];
            }
        }
    }
    let mut gs = vec![0.0f64; support.len()];
    for (r, &l) in support_labels.iter().enumerate() {
        for k in 0..dim {
            gs[r * dim + k] = gc[l][k] / counts[l] as f64;
        }
    }
    let cast = |v: Vec<f64>| v.into_iter().map(T::of).collect::<Vec<T>>();
    Ok((
        T::of(total / nq),
        Tensor::new(queries.shape().to_vec(), cast(gq))?,
        Tensor::new(support.shape().to_vec(), cast(gs))?,
    ))
}
