use crate::error::{Error, Result};
use crate::ops::{dot, norm, normalize_slice};
use crate::tensor::{Real, Tensor};

use super::queue::KeyQueue;

/// `v.u / (|v| |u|)`.
pub fn cosine_similarity<T: Real>(v: &[T], u: &[T]) -> Result<T> {
    if v.len() != u.len() {
        return Err(Error::Shape {
            op: "cosine_similarity",
            lhs: vec![v.len()],
            rhs: vec![u.len()],
        });
    }
    let a = normalize_slice(v)?;
    let b = normalize_slice(u)?;
    Ok(dot(&a, &b).max(-T::one()).min(T::one()))
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {tau}"
        )))
    }
}

fn normalize_rows<T: Real>(z: &Tensor<T>) -> Result<(Vec<Vec<T>>, Vec<T>)> {
    let c = z.cols();
    let mut rows = Vec::with_capacity(z.rows());
    let mut norms = Vec::with_capacity(z.rows());
    for r in 0..z.rows() {
        let row = &z.data()[r * c..(r + 1) * c];
        rows.push(normalize_slice(row)?);
        norms.push(norm(row));
    }
    Ok((rows, norms))
}

/// Maps a gradient with respect to normalized rows back to the raw rows.
fn unnormalize_grad<T: Real>(u: &[Vec<T>], norms: &[T], du: Vec<Vec<T>>, shape: &[usize]) -> Tensor<T> {
    let mut out = Vec::with_capacity(u.len() * u.first().map_or(0, Vec::len));
    for ((ui, &n), gi) in u.iter().zip(norms).zip(du) {
        let proj = dot(ui, &gi);
        out.extend(ui.iter().zip(&gi).map(|(&a, &g)| (g - a * proj) / n));
    }
    Tensor::from_parts(shape.to_vec(), out)
}

/// `log sum exp` of `logits`, stabilized by the maximum.
fn log_sum_exp<T: Real>(logits: &[T]) -> T {
    let m = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    m + logits.iter().map(|&l| (l - m).exp()).sum::<T>().ln()
}

fn check_matching(partners: &[usize], n: usize) -> Result<()> {
    if n < 2 || n % 2 != 0 || partners.len() != n {
        return Err(Error::InvalidArgument(format!(
            "NT-Xent needs an even number (>= 2) of embeddings with one partner each, got {n} embeddings and {} partners",
            partners.len()
        )));
    }
    for (i, &j) in partners.iter().enumerate() {
        if j >= n || j == i || partners[j] != i {
            return Err(Error::InvalidArgument(format!(
                "pair index is not a perfect matching at position {i} (partner {j})"
            )));
        }
    }
    Ok(())
}

/// NT-Xent over the rows of `z` (`[2N, d]`), where `partners[i]` is the
/// positive for anchor `i`. Every other row of the batch is a negative.
/// Returns the mean over all `2N` anchors and its gradient.
pub fn nt_xent_rows<T: Real>(z: &Tensor<T>, partners: &[usize], tau: f64) -> Result<(T, Tensor<T>)> {
    check_tau(tau)?;
    if z.rank() != 2 {
        return Err(Error::InvalidShape {
            op: "nt_xent",
            reason: format!("expected [2N, d], got {:?}", z.shape()),
        });
    }
    let n = z.rows();
    check_matching(partners, n)?;
    let (u, norms) = normalize_rows(z)?;
    let inv_tau = T::of(1.0 / tau);
    let scale = T::one() / T::of(n as f64);
    let d = z.cols();
    let mut du = vec![vec![T::zero(); d]; n];
    let mut total = T::zero();

    for i in 0..n {
        let others: Vec<usize> = (0..n).filter(|&k| k != i).collect();
        let logits: Vec<T> = others.iter().map(|&k| dot(&u[i], &u[k]) * inv_tau).collect();
        let lse = log_sum_exp(&logits);
        let pos = others.iter().position(|&k| k == partners[i]).expect("partner is another row");
        total = total + (lse - logits[pos]);
        for (slot, &k) in others.iter().enumerate() {
            let p = (logits[slot] - lse).exp();
            let target = if slot == pos { T::one() } else { T::zero() };
            let g = (p - target) * inv_tau * scale;
            if g == T::zero() {
                continue;
            }
            for t in 0..d {
                du[i][t] = du[i][t] + g * u[k][t];
                du[k][t] = du[k][t] + g * u[i][t];
            }
        }
    }
    Ok((total * scale, unnormalize_grad(&u, &norms, du, z.shape())))
}

/// NT-Xent over a list of `2N` embedding vectors.
pub fn nt_xent_loss<T: Real>(z: &[Tensor<T>], partners: &[usize], tau: f64) -> Result<(T, Vec<Tensor<T>>)> {
    let first = z.first().ok_or_else(|| Error::InvalidArgument("no embeddings".into()))?;
    let d = first.len();
    let mut data = Vec::with_capacity(d * z.len());
    for v in z {
        if v.len() != d {
            return Err(Error::Shape {
                op: "nt_xent",
                lhs: first.shape().to_vec(),
                rhs: v.shape().to_vec(),
            });
        }
        data.extend_from_slice(v.data());
    }
    let m = Tensor::new(vec![z.len(), d], data)?;
    let (loss, g) = nt_xent_rows(&m, partners, tau)?;
    let grads = (0..z.len())
        .map(|r| Tensor::from_parts(z[r].shape().to_vec(), g.row(r).to_vec()))
        .collect();
    Ok((loss, grads))
}

/// Result of the batched queue loss.
#[derive(Clone, Debug)]
pub struct InfoNceOutput<T: Real> {
    pub loss: T,
    /// Gradient with respect to the raw queries.
    pub grad: Tensor<T>,
    /// Mean cosine similarity between each query and its positive key.
    pub mean_positive: f64,
    /// Mean cosine similarity between queries and queue entries, or `None`
    /// for an empty queue.
    pub mean_negative: Option<f64>,
}

/// Queue-based InfoNCE for a batch of queries `[B, d]` against their
/// positive keys `[B, d]`. Negatives are exactly the queue entries. Keys are
/// constants; only the queries receive gradient. The loss is the batch mean.
pub fn info_nce_rows<T: Real>(
    queries: &Tensor<T>,
    keys: &Tensor<T>,
    queue: &KeyQueue<T>,
    tau: f64,
) -> Result<InfoNceOutput<T>> {
    check_tau(tau)?;
    if queries.rank() != 2 || queries.shape() != keys.shape() {
        return Err(Error::Shape {
            op: "info_nce",
            lhs: queries.shape().to_vec(),
            rhs: keys.shape().to_vec(),
        });
    }
    if let Some(dim) = queue.dim() {
        if dim != queries.cols() {
            return Err(Error::Shape {
                op: "info_nce",
                lhs: queries.shape().to_vec(),
                rhs: vec![queue.len(), dim],
            });
        }
    }
    let b = queries.rows();
    let d = queries.cols();
    let (u, norms) = normalize_rows(queries)?;
    let (kp, _) = normalize_rows(keys)?;
    let inv_tau = T::of(1.0 / tau);
    let scale = T::one() / T::of(b as f64);
    let mut du = vec![vec![T::zero(); d]; b];
    let mut total = T::zero();
    let (mut pos_sum, mut neg_sum, mut neg_count) = (0.0f64, 0.0f64, 0usize);

    for r in 0..b {
        let s_pos = dot(&u[r], &kp[r]);
        pos_sum += s_pos.f64();
        let mut logits = Vec::with_capacity(queue.len() + 1);
        logits.push(s_pos * inv_tau);
        for neg in queue.iter() {
            let s = dot(&u[r], neg);
            neg_sum += s.f64();
            neg_count += 1;
            logits.push(s * inv_tau);
        }
        let lse = log_sum_exp(&logits);
        total = total + (lse - logits[0]);
        let g0 = ((logits[0] - lse).exp() - T::one()) * inv_tau * scale;
        for t in 0..d {
            du[r][t] = du[r][t] + g0 * kp[r][t];
        }
        for (slot, neg) in queue.iter().enumerate() {
            let g = (logits[slot + 1] - lse).exp() * inv_tau * scale;
            for t in 0..d {
                du[r][t] = du[r][t] + g * neg[t];
            }
        }
    }
    Ok(InfoNceOutput {
        loss: total * scale,
        grad: unnormalize_grad(&u, &norms, du, queries.shape()),
        mean_positive: pos_sum / b as f64,
        mean_negative: (neg_count > 0).then(|| neg_sum / neg_count as f64),
    })
}

/// Single-query form; returns the loss and its gradient with respect to `q`.
pub fn info_nce_loss<T: Real>(
    q: &Tensor<T>,
    k_pos: &Tensor<T>,
    queue: &KeyQueue<T>,
    tau: f64,
) -> Result<(T, Tensor<T>)> {
    let qm = q.reshape(&[1, q.len()])?;
    let km = k_pos.reshape(&[1, k_pos.len()])?;
    let out = info_nce_rows(&qm, &km, queue, tau)?;
    Ok((out.loss, out.grad.reshape(q.shape())?))
}
