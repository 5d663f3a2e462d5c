use crate::augment::{make_view_pair, AugmentationSpec, ViewPair};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::optim::{sgd_step, SgdConfig};
use crate::params::ParameterSet;
use crate::rng::{purpose, Philox};
use crate::tensor::Tensor;

use super::head::ModelConfig;
use super::loss::{cosine_similarity, info_nce_rows};
use super::momentum::MomentumPair;
use super::queue::KeyQueue;

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub tau: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub queue_capacity: usize,
    pub m: f64,
    pub sgd: SgdConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            batch_size: 16,
            epochs: 30,
            queue_capacity: 1024,
            m: 0.999,
            sgd: SgdConfig::default(),
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::InvalidArgument(format!("tau must be positive, got {}", self.tau)));
        }
        if self.batch_size == 0 || self.queue_capacity == 0 {
            return Err(Error::InvalidArgument(
                "batch size and queue capacity must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.m) {
            return Err(Error::InvalidArgument(format!(
                "momentum coefficient must lie in [0, 1], got {}",
                self.m
            )));
        }
        self.sgd.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    /// Sample-weighted mean of the batch losses.
    pub loss: f64,
    /// Mean cosine similarity of each query with its positive key.
    pub positive_similarity: f64,
    /// Mean cosine similarity of queries with queue negatives.
    pub negative_similarity: f64,
}

impl EpochMetrics {
    pub fn similarity_gap(&self) -> f64 {
        self.positive_similarity - self.negative_similarity
    }
}

fn view_pairs(
    data: &[ImageTensor],
    indices: &[usize],
    spec: &AugmentationSpec,
    seed: u64,
    tags: impl Fn(usize) -> Vec<u64>,
) -> Result<Vec<ViewPair>> {
    indices
        .iter()
        .map(|&i| {
            let mut rng = Philox::for_tags(seed, &tags(i));
            make_view_pair(&data[i], i, spec, &mut rng)
        })
        .collect()
}

/// Forward pass through encoder and head without recording gradients.
pub fn embed(model: &ModelConfig, params: &ParameterSet<f32>, images: &[&ImageTensor]) -> Result<Tensor<f32>> {
    let mut tape = Tape::new();
    let x = tape.input(ImageTensor::batch(images)?)?;
    let z = model.forward(&mut tape, params, x)?;
    Ok(tape.value(z).clone())
}

/// Fills the queue with keys from one augmented warmup batch so the first
/// training step already sees negatives.
pub fn warmup_queue(
    data: &[ImageTensor],
    pair: &MomentumPair<f32>,
    queue: &mut KeyQueue<f32>,
    spec: &AugmentationSpec,
    model: &ModelConfig,
    batch_size: usize,
    seed: u64,
) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    Philox::for_tags(seed, &[purpose::WARMUP]).shuffle(&mut order);
    order.truncate(batch_size.min(data.len()));
    let pairs = view_pairs(data, &order, spec, seed, |i| vec![purpose::WARMUP, i as u64])?;
    let views: Vec<&ImageTensor> = pairs.iter().map(|p| &p.view_j).collect();
    let keys = embed(model, &pair.theta_k, &views)?;
    queue.enqueue_batch(&keys)
}

/// One pass over `data` in shuffled mini-batches. Per batch: build a view
/// pair per image, encode `view_i` with the query side and `view_j` with the
/// key side, take the queue loss, step the query side with SGD, move the key
/// side by the momentum rule, then enqueue the batch keys.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_epoch(
    data: &[ImageTensor],
    pair: &mut MomentumPair<f32>,
    queue: &mut KeyQueue<f32>,
    spec: &AugmentationSpec,
    cfg: &PretrainConfig,
    model: &ModelConfig,
    epoch: usize,
    seed: u64,
) -> Result<EpochMetrics> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    cfg.validate()?;
    let lr = cfg.sgd.lr_at_epoch(epoch);
    let mut order: Vec<usize> = (0..data.len()).collect();
    Philox::for_tags(seed, &[purpose::SHUFFLE, epoch as u64]).shuffle(&mut order);

    let (mut loss_sum, mut pos_sum, mut neg_sum) = (0.0, 0.0, 0.0);
    let (mut seen, mut neg_batches, mut steps) = (0usize, 0usize, 0usize);

    for batch in order.chunks(cfg.batch_size) {
        let pairs = view_pairs(data, batch, spec, seed, |i| {
            vec![purpose::AUGMENT, i as u64, epoch as u64]
        })?;
        let key_views: Vec<&ImageTensor> = pairs.iter().map(|p| &p.view_j).collect();
        let keys = embed(model, &pair.theta_k, &key_views)?;

        let query_views: Vec<&ImageTensor> = pairs.iter().map(|p| &p.view_i).collect();
        let mut tape = Tape::new();
        let x = tape.input(ImageTensor::batch(&query_views)?)?;
        let q = model.forward(&mut tape, &pair.theta_q, x)?;

        let mut stats = None;
        let loss = tape.fused_scalar("info_nce", &[q], |v| {
            let out = info_nce_rows(v[0], &keys, queue, cfg.tau)?;
            stats = Some((out.mean_positive, out.mean_negative));
            Ok((out.loss, vec![out.grad]))
        })?;
        let (pos, neg) = stats.expect("loss closure ran");
        let b = batch.len() as f64;
        loss_sum += f64::from(tape.value(loss).data()[0]) * b;
        pos_sum += pos * b;
        if let Some(n) = neg {
            neg_sum += n * b;
            neg_batches += batch.len();
        }
        seen += batch.len();

        tape.backward(loss, &mut pair.theta_q)?;
        sgd_step(&mut pair.theta_q, &cfg.sgd, lr);
        pair.momentum_update()?;
        queue.enqueue_batch(&keys)?;
        steps += 1;
    }

    Ok(EpochMetrics {
        epoch,
        lr,
        steps,
        loss: loss_sum / seen as f64,
        positive_similarity: pos_sum / seen as f64,
        negative_similarity: if neg_batches > 0 {
            neg_sum / neg_batches as f64
        } else {
            0.0
        },
    })
}

/// Mean cosine similarity of positive pairs `(f_q(view_i), f_k(view_j))`
/// and of cross-sample pairs within the same batch.
pub fn similarity_gap(
    data: &[ImageTensor],
    pair: &MomentumPair<f32>,
    spec: &AugmentationSpec,
    model: &ModelConfig,
    seed: u64,
) -> Result<(f64, f64)> {
    if data.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two images to form negative pairs".into(),
        ));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let pairs = view_pairs(data, &idx, spec, seed, |i| vec![purpose::PROBE, i as u64])?;
    let qi: Vec<&ImageTensor> = pairs.iter().map(|p| &p.view_i).collect();
    let kj: Vec<&ImageTensor> = pairs.iter().map(|p| &p.view_j).collect();
    let q = embed(model, &pair.theta_q, &qi)?;
    let k = embed(model, &pair.theta_k, &kj)?;
    let n = data.len();
    let (mut pos, mut neg) = (0.0, 0.0);
    for a in 0..n {
        for b in 0..n {
            let s = f64::from(cosine_similarity(q.row(a), k.row(b))?);
            if a == b {
                pos += s;
            } else {
                neg += s;
            }
        }
    }
    Ok((pos / n as f64, neg / (n * (n - 1)) as f64))
}
