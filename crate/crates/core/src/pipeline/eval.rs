use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fewshot::{finetune, predict_episode, sample_split_episode, Episode, LabeledSample, MetaConfig, Prediction};
use crate::metrics::{
    accuracy, aggregate, plan_stratified_group_kfold, precision, recall, roc_auc, ConfusionCounts, ScoredSample,
};
use crate::nn::EncoderConfig;
use crate::params::ParameterSet;
use crate::rng::{purpose, stream_id, Philox};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub folds: usize,
    /// Evaluation episodes per fold.
    pub episodes: usize,
    pub queries_per_class: usize,
    /// Fine-tune a copy of the encoder on each fold's training groups
    /// before scoring it.
    pub finetune: bool,
    /// Class treated as positive for precision, recall and AUC.
    pub positive_class: usize,
    /// Training groups per class whose labels may be used for fine-tuning
    /// and as episode support; 0 uses every training group.
    pub label_groups: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            episodes: 100,
            queries_per_class: 1,
            finetune: true,
            positive_class: 1,
            label_groups: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config(format!("eval.folds must be at least 2, got {}", self.folds)));
        }
        if self.episodes == 0 || self.queries_per_class == 0 {
            return Err(Error::Config("eval.episodes and eval.queries must be at least 1".into()));
        }
        Ok(())
    }
}

/// Anything that can label the queries of an episode.
pub trait EpisodeClassifier: Sync {
    fn classify(&self, data: &[LabeledSample], episode: &Episode) -> Result<Vec<Prediction>>;
}

/// Nearest-prototype classification with a fixed encoder.
pub struct PrototypeClassifier<'a> {
    pub encoder: ParameterSet<f32>,
    pub enc_cfg: &'a EncoderConfig,
    pub meta: &'a MetaConfig,
}

impl EpisodeClassifier for PrototypeClassifier<'_> {
    fn classify(&self, data: &[LabeledSample], episode: &Episode) -> Result<Vec<Prediction>> {
        predict_episode(data, episode, &self.encoder, self.enc_cfg, self.meta)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub groups: Vec<String>,
    pub counts: ConfusionCounts,
    pub queries: usize,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub folds: Vec<FoldResult>,
    /// Folds skipped as infeasible, with the reason.
    pub skipped: Vec<(usize, String)>,
}

/// Mean and std over the folds where a metric is defined; `None` when
/// fewer than two folds define it.
pub type Aggregate = Option<(f64, f64)>;

impl EvalSummary {
    fn agg(&self, f: impl Fn(&FoldResult) -> Option<f64>) -> Aggregate {
        let v: Vec<f64> = self.folds.iter().filter_map(f).collect();
        aggregate(&v).ok()
    }

    pub fn accuracy(&self) -> Aggregate {
        self.agg(|f| Some(f.accuracy))
    }

    pub fn precision(&self) -> Aggregate {
        self.agg(|f| f.precision)
    }

    pub fn recall(&self) -> Aggregate {
        self.agg(|f| f.recall)
    }

    pub fn auc(&self) -> Aggregate {
        self.agg(|f| f.auc)
    }
}

/// Seed for fold-local work (fine-tuning) derived from the run seed.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    stream_id(&[purpose::FOLDS, seed, fold as u64])
}

/// Keeps the samples of at most `per_class` randomly chosen groups of each
/// class; `per_class == 0` keeps everything.
pub fn labeled_budget(data: &[LabeledSample], pool: &[usize], per_class: usize, seed: u64) -> Vec<usize> {
    if per_class == 0 {
        return pool.to_vec();
    }
    let mut by_class: BTreeMap<usize, BTreeSet<&str>> = BTreeMap::new();
    for &i in pool {
        by_class.entry(data[i].label).or_default().insert(&data[i].group_id);
    }
    let mut rng = Philox::for_tags(seed, &[purpose::FOLDS, 1]);
    let mut keep = BTreeSet::new();
    for groups in by_class.into_values() {
        let groups: Vec<&str> = groups.into_iter().collect();
        let k = per_class.min(groups.len());
        keep.extend(rng.choose_indices(groups.len(), k).into_iter().map(|i| groups[i]));
    }
    pool.iter().copied().filter(|&i| keep.contains(data[i].group_id.as_str())).collect()
}

enum FoldOutcome {
    Done(FoldResult),
    Skipped(usize, String),
}

/// Group-level k-fold evaluation. For each fold, `build` receives the
/// fold index and the training-pool indices and returns a classifier;
/// episodes then draw support from the training pool and queries from the
/// held-out groups. Folds run in parallel; results keep fold order.
pub fn evaluate_with<C, F>(
    data: &[LabeledSample],
    ways: usize,
    shots: usize,
    cfg: &EvalConfig,
    seed: u64,
    build: F,
) -> Result<EvalSummary>
where
    C: EpisodeClassifier,
    F: Fn(usize, &[usize]) -> Result<C> + Sync,
{
    cfg.validate()?;
    let groups: Vec<(String, usize)> = data.iter().map(|s| (s.group_id.clone(), s.label)).collect();
    let plan = plan_stratified_group_kfold(&groups, cfg.folds, seed)?;
    let outcomes: Vec<FoldOutcome> = plan
        .folds()
        .into_par_iter()
        .enumerate()
        .map(|(fold, held_out)| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..data.len()).partition(|&i| plan.fold_of(&data[i].group_id) == Some(fold));
            let train = labeled_budget(data, &train, cfg.label_groups, fold_seed(seed, fold));
            let episodes: Result<Vec<Episode>> = (0..cfg.episodes)
                .map(|e| {
                    let mut rng = Philox::for_tags(seed, &[purpose::EPISODE, fold as u64, e as u64, 1]);
                    sample_split_episode(data, &train, &test, ways, shots, cfg.queries_per_class, &mut rng)
                })
                .collect();
            let episodes = match episodes {
                Ok(e) => e,
                Err(err @ (Error::EpisodeInfeasible { .. } | Error::InvalidArgument(_))) => {
                    log::warn!("fold {fold} skipped: {err}");
                    return Ok(FoldOutcome::Skipped(fold, err.to_string()));
                }
                Err(err) => return Err(err),
            };
            let clf = build(fold, &train)?;
            let preds: Vec<Vec<Prediction>> = episodes
                .par_iter()
                .map(|ep| clf.classify(data, ep))
                .collect::<Result<_>>()?;
            score_fold(fold, held_out, ways, cfg.positive_class, &preds).map(FoldOutcome::Done)
        })
        .collect::<Result<_>>()?;

    let mut summary = EvalSummary {
        folds: Vec::new(),
        skipped: Vec::new(),
    };
    for o in outcomes {
        match o {
            FoldOutcome::Done(r) => summary.folds.push(r),
            FoldOutcome::Skipped(f, why) => summary.skipped.push((f, why)),
        }
    }
    Ok(summary)
}

fn score_fold(
    fold: usize,
    held_out: Vec<String>,
    ways: usize,
    positive: usize,
    preds: &[Vec<Prediction>],
) -> Result<FoldResult> {
    let mut counts = ConfusionCounts::default();
    let mut scores = Vec::new();
    let (mut correct, mut total) = (0usize, 0usize);
    for p in preds.iter().flatten() {
        counts.record(p.predicted == positive, p.truth == positive);
        scores.push(ScoredSample {
            score: p.posterior.get(&positive).copied().unwrap_or(0.0),
            truth: p.truth == positive,
        });
        correct += usize::from(p.predicted == p.truth);
        total += 1;
    }
    let defined = |r: Result<f64>, what: &str| match r {
        Ok(v) => Some(v),
        Err(e) => {
            log::warn!("fold {fold}: {what} undefined: {e}");
            None
        }
    };
    let acc = if ways == 2 {
        accuracy(&counts)?
    } else {
        correct as f64 / total as f64
    };
    Ok(FoldResult {
        fold,
        groups: held_out,
        counts,
        queries: total,
        accuracy: acc,
        precision: defined(precision(&counts), "precision"),
        recall: defined(recall(&counts), "recall"),
        auc: defined(roc_auc(&scores), "AUC"),
    })
}

/// [`evaluate_with`] using prototype classification, optionally after
/// per-fold fine-tuning of a copy of `encoder`.
pub fn evaluate(
    data: &[LabeledSample],
    encoder: &ParameterSet<f32>,
    enc_cfg: &EncoderConfig,
    meta: &MetaConfig,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<EvalSummary> {
    evaluate_with(data, meta.ways, meta.shots, cfg, seed, |fold, train| {
        let mut enc = encoder.clone();
        if cfg.finetune {
            let logs = finetune(&mut enc, enc_cfg, data, train, meta, fold_seed(seed, fold))?;
            if let Some(last) = logs.last() {
                log::info!("fold {fold}: fine-tuned {} episodes, last loss {:.4}", logs.len(), last.loss);
            }
        }
        Ok(PrototypeClassifier {
            encoder: enc,
            enc_cfg,
            meta,
        })
    })
}
