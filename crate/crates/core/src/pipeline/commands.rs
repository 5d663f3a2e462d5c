//! The five commands behind the command-line tool. Each writes its outputs
//! into one directory; everything except `timing.txt` is a pure function of
//! the configuration, the seed and the input files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use crate::checkpoint;
use crate::config::{Precision, RunConfig};
use crate::contrastive::{pretrain_epoch, warmup_queue, EpochMetrics, KeyQueue, MomentumPair};
use crate::data::{load_dataset, save_dataset, synth_dataset, Dataset};
use crate::error::{Error, Result};
use crate::fewshot::{finetune, EpisodeLog, LabeledSample};
use crate::gradcheck::{run_suite, OpCheck};
use crate::nn::{EncoderConfig, ENCODER_PREFIX};
use crate::params::ParameterSet;

use super::eval::{evaluate, Aggregate, EvalSummary};

pub const CHECKPOINT: &str = "checkpoint.pmck";
pub const FINETUNED: &str = "finetuned.pmck";
pub const PRETRAIN_LOG: &str = "pretrain_log.csv";
pub const EPISODE_LOG: &str = "episode_log.csv";
pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_CSV: &str = "report.csv";
pub const GRADCHECK_TXT: &str = "gradcheck.txt";
pub const CONFIG_ECHO: &str = "config.txt";
pub const TIMING: &str = "timing.txt";

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn prepare(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write(&out.join(CONFIG_ECHO), &cfg.to_text())
}

fn labeled_root(cfg: &RunConfig) -> Result<&Path> {
    cfg.data
        .root
        .as_deref()
        .ok_or_else(|| Error::Config("data.root is required for this command".into()))
}

fn load_labeled(cfg: &RunConfig) -> Result<Vec<LabeledSample>> {
    let data = load_dataset(labeled_root(cfg)?, cfg.data.image_size)?.labeled();
    if data.is_empty() {
        return Err(Error::InvalidArgument("dataset has no labeled samples".into()));
    }
    Ok(data)
}

/// Loads a checkpoint and checks its encoder weights against `enc_cfg`.
pub fn load_encoder(path: &Path, enc_cfg: &EncoderConfig) -> Result<(ParameterSet<f32>, ParameterSet<f32>)> {
    let all = checkpoint::load(path)?;
    let encoder = all.subset(ENCODER_PREFIX);
    enc_cfg.init::<f32>(0)?.check_compatible(&encoder)?;
    Ok((all, encoder))
}

pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<Dataset> {
    cfg.validate()?;
    let data = synth_dataset(&cfg.synth, cfg.seed)?;
    save_dataset(out, &data)?;
    Ok(data)
}

pub struct PretrainOutcome {
    pub pair: MomentumPair<f32>,
    pub epochs: Vec<EpochMetrics>,
}

/// Pretrains the query encoder and head, then saves them. The unlabeled
/// corpus is `data.pretrain_root`, falling back to `data.root`.
pub fn cmd_pretrain(cfg: &RunConfig, out: &Path) -> Result<PretrainOutcome> {
    prepare(cfg, out)?;
    let start = Instant::now();
    let root = match &cfg.data.pretrain_root {
        Some(p) => p.as_path(),
        None => labeled_root(cfg)?,
    };
    let images = load_dataset(root, cfg.data.image_size)?.images;
    let model = cfg.model_config();
    let mut pair = MomentumPair::from_query(model.init(cfg.seed)?, cfg.pretrain.m)?;
    let mut queue = KeyQueue::new(cfg.pretrain.queue_capacity)?;
    let mut log = String::from("epoch,lr,loss,pos_sim,neg_sim,gap\n");
    let mut epochs = Vec::with_capacity(cfg.pretrain.epochs);
    if cfg.pretrain.epochs > 0 {
        warmup_queue(&images, &pair, &mut queue, &cfg.augment, &model, cfg.pretrain.batch_size, cfg.seed)?;
    }
    for e in 0..cfg.pretrain.epochs {
        let m = pretrain_epoch(&images, &mut pair, &mut queue, &cfg.augment, &cfg.pretrain, &model, e, cfg.seed)?;
        log::info!(
            "epoch {e}: loss {:.4} pos {:.3} neg {:.3}",
            m.loss,
            m.positive_similarity,
            m.negative_similarity
        );
        writeln!(
            log,
            "{},{},{},{},{},{}",
            m.epoch,
            m.lr,
            m.loss,
            m.positive_similarity,
            m.negative_similarity,
            m.similarity_gap()
        )
        .expect("write to string");
        epochs.push(m);
    }
    checkpoint::save(&pair.theta_q, &out.join(CHECKPOINT))?;
    write(&out.join(PRETRAIN_LOG), &log)?;
    write(&out.join(TIMING), &format!("wall_clock_seconds = {:.3}\n", start.elapsed().as_secs_f64()))?;
    Ok(PretrainOutcome { pair, epochs })
}

/// Episodic fine-tuning of the checkpoint's encoder on every labeled
/// sample. Other weights in the checkpoint are carried over unchanged.
pub fn cmd_fewshot(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<Vec<EpisodeLog>> {
    prepare(cfg, out)?;
    let start = Instant::now();
    let enc_cfg = cfg.model_config().encoder;
    let (mut all, mut encoder) = load_encoder(checkpoint, &enc_cfg)?;
    let data = load_labeled(cfg)?;
    let pool: Vec<usize> = (0..data.len()).collect();
    let logs = finetune(&mut encoder, &enc_cfg, &data, &pool, &cfg.meta, cfg.seed)?;
    for (name, p) in encoder.iter() {
        all.insert(name, p.value.clone());
    }
    checkpoint::save(&all, &out.join(FINETUNED))?;
    let mut log = String::from("episode,loss,accuracy\n");
    for l in &logs {
        writeln!(log, "{},{},{}", l.episode, l.loss, l.accuracy()).expect("write to string");
    }
    write(&out.join(EPISODE_LOG), &log)?;
    write(&out.join(TIMING), &format!("wall_clock_seconds = {:.3}\n", start.elapsed().as_secs_f64()))?;
    Ok(logs)
}

/// Cross-validated few-shot evaluation. Without a checkpoint the encoder
/// starts from the seed's initialization, the same one pretraining would
/// start from.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>, out: &Path) -> Result<EvalSummary> {
    prepare(cfg, out)?;
    let start = Instant::now();
    let enc_cfg = cfg.model_config().encoder;
    let encoder = match checkpoint {
        Some(p) => load_encoder(p, &enc_cfg)?.1,
        None => enc_cfg.init(cfg.seed)?,
    };
    let data = load_labeled(cfg)?;
    let summary = evaluate(&data, &encoder, &enc_cfg, &cfg.meta, &cfg.eval, cfg.seed)?;
    write(&out.join(REPORT_TXT), &report_text(cfg, checkpoint, &summary))?;
    write(&out.join(REPORT_CSV), &report_csv(&summary))?;
    write(&out.join(TIMING), &format!("wall_clock_seconds = {:.3}\n", start.elapsed().as_secs_f64()))?;
    Ok(summary)
}

fn opt(v: Option<f64>) -> String {
    v.map_or("undefined".into(), |x| x.to_string())
}

fn agg_pairs(kv: &mut Vec<(String, String)>, name: &str, a: Aggregate) {
    kv.push((format!("{name}_mean"), opt(a.map(|p| p.0))));
    kv.push((format!("{name}_std"), opt(a.map(|p| p.1))));
}

/// One `key = value` per line: aggregates, per-fold results, skipped
/// folds, then the full configuration under `config.`.
pub fn report_text(cfg: &RunConfig, checkpoint: Option<&Path>, s: &EvalSummary) -> String {
    let mut kv: Vec<(String, String)> = vec![
        ("seed".into(), cfg.seed.to_string()),
        (
            "checkpoint".into(),
            checkpoint.map_or("none".into(), |p| p.display().to_string()),
        ),
        ("folds_evaluated".into(), s.folds.len().to_string()),
        ("folds_skipped".into(), s.skipped.len().to_string()),
    ];
    agg_pairs(&mut kv, "accuracy", s.accuracy());
    agg_pairs(&mut kv, "precision", s.precision());
    agg_pairs(&mut kv, "recall", s.recall());
    agg_pairs(&mut kv, "auc", s.auc());
    for f in &s.folds {
        let c = &f.counts;
        let key = |k: &str| format!("fold.{}.{k}", f.fold);
        kv.push((key("groups"), f.groups.join(";")));
        kv.push((key("queries"), f.queries.to_string()));
        kv.push((key("counts"), format!("tp:{} fp:{} tn:{} fn:{}", c.tp, c.fp, c.tn, c.fn_)));
        kv.push((key("accuracy"), f.accuracy.to_string()));
        kv.push((key("precision"), opt(f.precision)));
        kv.push((key("recall"), opt(f.recall)));
        kv.push((key("auc"), opt(f.auc)));
    }
    for (fold, why) in &s.skipped {
        kv.push((format!("skipped.{fold}"), why.clone()));
    }
    for (k, v) in cfg.entries() {
        kv.push((format!("config.{k}"), v));
    }
    kv.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

pub fn report_csv(s: &EvalSummary) -> String {
    let mut out = String::from("fold,queries,tp,fp,tn,fn,accuracy,precision,recall,auc\n");
    for f in &s.folds {
        let c = &f.counts;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            f.fold,
            f.queries,
            c.tp,
            c.fp,
            c.tn,
            c.fn_,
            f.accuracy,
            opt(f.precision),
            opt(f.recall),
            opt(f.auc)
        )
        .expect("write to string");
    }
    for (label, pick) in [("mean", 0), ("std", 1)] {
        let v = |a: Aggregate| opt(a.map(|p| if pick == 0 { p.0 } else { p.1 }));
        writeln!(
            out,
            "{label},,,,,,{},{},{},{}",
            v(s.accuracy()),
            v(s.precision()),
            v(s.recall()),
            v(s.auc())
        )
        .expect("write to string");
    }
    out
}

pub fn gradcheck_table(checks: &[OpCheck]) -> String {
    let mut out = format!(
        "{:<26} {:<4} {:>9} {:>8} {:>7} {:>12}  status\n",
        "op", "prec", "instances", "entries", "skipped", "max_rel_err"
    );
    for c in checks {
        writeln!(
            out,
            "{:<26} {:<4} {:>9} {:>8} {:>7} {:>12.3e}  {}",
            c.op,
            c.precision,
            c.instances,
            c.entries,
            c.skipped,
            c.max_rel_err,
            if c.passed { "pass" } else { "FAIL" }
        )
        .expect("write to string");
    }
    out
}

/// Runs the finite-difference suite in the configured precisions. With
/// `out`, the table is also written to `gradcheck.txt`.
pub fn cmd_gradcheck(cfg: &RunConfig, out: Option<&Path>) -> Result<Vec<OpCheck>> {
    cfg.validate()?;
    let mut checks = Vec::new();
    if cfg.gradcheck_precision != Precision::F64 {
        checks.extend(run_suite::<f32>(&cfg.gradcheck, cfg.seed)?);
    }
    if cfg.gradcheck_precision != Precision::F32 {
        checks.extend(run_suite::<f64>(&cfg.gradcheck, cfg.seed)?);
    }
    if let Some(out) = out {
        prepare(cfg, out)?;
        write(&out.join(GRADCHECK_TXT), &gradcheck_table(&checks))?;
    }
    Ok(checks)
}
