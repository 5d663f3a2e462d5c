use std::collections::BTreeMap;

use crate::autodiff::Tape;
use crate::error::Result;
use crate::fewshot::episode::{sample_episode_from, Episode, LabeledSample};
use crate::fewshot::proto::{
    class_posterior, embed_images, episode_loss_rows, nearest_prototype, prototypes_from_embeddings, MetaConfig,
    PrototypeSet,
};
use crate::image::ImageTensor;
use crate::nn::{encode, EncoderConfig};
use crate::optim::sgd_step;
use crate::params::ParameterSet;
use crate::rng::{purpose, Philox};
use crate::tensor::Tensor;

/// One fine-tuning record.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    pub loss: f64,
    /// Whether each query was classified correctly before the update.
    pub correct: Vec<bool>,
}

impl EpisodeLog {
    pub fn accuracy(&self) -> f64 {
        self.correct.iter().filter(|&&c| c).count() as f64 / self.correct.len().max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub sample: usize,
    pub truth: usize,
    pub predicted: usize,
    pub posterior: BTreeMap<usize, f64>,
}

/// Support indices in class order, their local labels, then the queries
/// and their local labels.
fn layout(episode: &Episode) -> (Vec<usize>, Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut s_idx = Vec::new();
    let mut s_lab = Vec::new();
    for (local, class) in episode.classes.iter().enumerate() {
        for &i in &episode.support[class] {
            s_idx.push(i);
            s_lab.push(local);
        }
    }
    let q_idx = episode.queries.iter().map(|&(i, _)| i).collect();
    let q_lab = episode
        .queries
        .iter()
        .map(|&(_, c)| episode.local_index(c).expect("query class in episode"))
        .collect();
    (s_idx, s_lab, q_idx, q_lab)
}

fn split_rows(h: &Tensor<f32>, at: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let d = h.cols();
    let (a, b) = h.data().split_at(at * d);
    Ok((
        Tensor::new(vec![at, d], a.to_vec())?,
        Tensor::new(vec![h.rows() - at, d], b.to_vec())?,
    ))
}

fn support_prototypes(episode: &Episode, support: &Tensor<f32>) -> Result<PrototypeSet<f32>> {
    let mut rows = BTreeMap::new();
    let mut r = 0;
    for class in &episode.classes {
        let n = episode.support[class].len();
        rows.insert(*class, (r..r + n).map(|i| support.row(i).to_vec()).collect());
        r += n;
    }
    prototypes_from_embeddings(&rows)
}

/// Episodic fine-tuning of `encoder` on samples from `pool`. Episode `e`
/// is drawn from its own random stream, so the run is reproducible from
/// `seed` alone. One SGD step per episode on the mean query loss; the step
/// schedule in `cfg.sgd` counts episodes.
pub fn finetune(
    encoder: &mut ParameterSet<f32>,
    enc_cfg: &EncoderConfig,
    data: &[LabeledSample],
    pool: &[usize],
    cfg: &MetaConfig,
    seed: u64,
) -> Result<Vec<EpisodeLog>> {
    cfg.validate()?;
    let mut logs = Vec::with_capacity(cfg.episodes);
    for e in 0..cfg.episodes {
        let mut rng = Philox::for_tags(seed, &[purpose::EPISODE, e as u64]);
        let episode = sample_episode_from(data, pool, cfg.ways, cfg.shots, &mut rng)?;
        let (s_idx, s_lab, q_idx, q_lab) = layout(&episode);
        let images: Vec<&ImageTensor> = s_idx.iter().chain(&q_idx).map(|&i| &data[i].image).collect();

        let mut tape = Tape::new();
        let x = tape.input(ImageTensor::batch(&images)?)?;
        let mut h = encode(&mut tape, encoder, enc_cfg, x)?;
        if cfg.normalize {
            h = tape.l2_normalize(h)?;
        }
        let (support, queries) = split_rows(tape.value(h), s_idx.len())?;

        let protos = support_prototypes(&episode, &support)?;
        let mut correct = Vec::with_capacity(q_idx.len());
        for (r, &(_, truth)) in episode.queries.iter().enumerate() {
            correct.push(nearest_prototype(queries.row(r), &protos, cfg.distance)? == truth);
        }

        let loss = tape.fused_scalar("meta_loss", &[h], |_| {
            let (l, gq, gs) = episode_loss_rows(&queries, &q_lab, &support, &s_lab, cfg.ways, cfg.distance, cfg.loss)?;
            let mut grad = gs.into_data();
            grad.extend_from_slice(gq.data());
            Ok((l, vec![Tensor::new(vec![images.len(), support.cols()], grad)?]))
        })?;
        let value = f64::from(tape.value(loss).data()[0]);
        tape.backward(loss, encoder)?;
        sgd_step(encoder, &cfg.sgd, cfg.sgd.lr_at_epoch(e));
        log::debug!("episode {e}: loss {value:.4}");
        logs.push(EpisodeLog {
            episode: e,
            loss: value,
            correct,
        });
    }
    Ok(logs)
}

/// Posterior and predicted class for every query of `episode`.
pub fn predict_episode(
    data: &[LabeledSample],
    episode: &Episode,
    encoder: &ParameterSet<f32>,
    enc_cfg: &EncoderConfig,
    meta: &MetaConfig,
) -> Result<Vec<Prediction>> {
    let (s_idx, _, q_idx, _) = layout(episode);
    let images: Vec<&ImageTensor> = s_idx.iter().chain(&q_idx).map(|&i| &data[i].image).collect();
    let h = embed_images(enc_cfg, encoder, meta, &images)?;
    let (support, queries) = split_rows(&h, s_idx.len())?;
    let protos = support_prototypes(episode, &support)?;
    episode
        .queries
        .iter()
        .enumerate()
        .map(|(r, &(sample, truth))| {
            let posterior = class_posterior(queries.row(r), &protos, meta.distance)?;
            Ok(Prediction {
                sample,
                truth,
                predicted: argmax(&posterior),
                posterior,
            })
        })
        .collect()
}

/// Most probable class, lowest id on ties.
fn argmax(posterior: &BTreeMap<usize, f64>) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (&c, &p) in posterior {
        if best.map_or(true, |(_, b)| p > b) {
            best = Some((c, p));
        }
    }
    best.expect("non-empty posterior").0
}

/// Class of a single query image given labeled support images.
pub fn predict(
    query: &ImageTensor,
    support: &BTreeMap<usize, Vec<&ImageTensor>>,
    encoder: &ParameterSet<f32>,
    enc_cfg: &EncoderConfig,
    meta: &MetaConfig,
) -> Result<usize> {
    let mut rows = BTreeMap::new();
    for (&class, images) in support {
        let emb = embed_images(enc_cfg, encoder, meta, images)?;
        rows.insert(class, (0..emb.rows()).map(|r| emb.row(r).to_vec()).collect());
    }
    let protos = prototypes_from_embeddings(&rows)?;
    let q = embed_images(enc_cfg, encoder, meta, &[query])?;
    Ok(argmax(&class_posterior(q.row(0), &protos, meta.distance)?))
}
