//! Acceptance criteria for the full system. Prints one PASS/FAIL line per
//! criterion and exits non-zero if any fails.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use protomoco::config::{Precision, RunConfig};
use protomoco::contrastive::{
    info_nce_loss, nt_xent_loss, pretrain_epoch, similarity_gap, warmup_queue, KeyQueue, MomentumPair,
};
use protomoco::data::{synth_dataset, SynthConfig};
use protomoco::fewshot::{
    class_posterior, embed_images, predict_episode, prototypes_from_embeddings, sample_episode, Distance,
    Episode, LabeledSample, Prediction,
};
use protomoco::metrics::{roc_auc, ScoredSample};
use protomoco::nn::EncoderConfig;
use protomoco::pipeline::{self, evaluate_with, EpisodeClassifier, EvalConfig};
use protomoco::{Philox, Tensor};

const DESK: &str = include_str!("../../../configs/desk.conf");

struct Outcome {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String), String>) -> Outcome {
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    let o = Outcome { name, passed, detail };
    println!("{} {:<26} {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
    o
}

fn e2s(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn desk(root: &Path) -> Result<RunConfig, String> {
    let mut cfg = RunConfig::parse(DESK).map_err(e2s)?;
    cfg.data.root = Some(root.to_path_buf());
    Ok(cfg)
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_protomoco"))
}

fn gradient_suite() -> Result<(bool, String), String> {
    let start = Instant::now();
    let mut cfg = RunConfig::default();
    cfg.gradcheck_precision = Precision::Both;
    let checks = pipeline::cmd_gradcheck(&cfg, None).map_err(e2s)?;
    let ops = checks.iter().filter(|c| c.precision == "f32").count();
    let worst = checks
        .iter()
        .filter(|c| c.precision == "f32")
        .map(|c| c.max_rel_err)
        .fold(0.0, f64::max);
    let all = checks.iter().all(|c| c.passed && c.instances >= 20);
    let status = bin().args(["gradcheck"]).output().map_err(e2s)?.status.code();
    let secs = start.elapsed().as_secs_f64();
    Ok((
        all && worst < 1e-3 && status == Some(0) && secs < 120.0,
        format!("{ops} ops x 2 precisions, worst f32 rel err {worst:.2e}, cli exit {status:?}, {secs:.1}s"),
    ))
}

fn v(data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(&[data.len()], data).unwrap()
}

fn loss_oracles() -> Result<(bool, String), String> {
    let mut worst = 0.0f64;
    let mut note = |got: f64, want: f64, tol: f64| {
        worst = worst.max((got - want).abs() / tol);
    };

    let (single, _) = nt_xent_loss(&[v(&[1., 2.]), v(&[-3., 0.5])], &[1, 0], 0.07).map_err(e2s)?;
    note(single, 0.0, 1e-6);
    let same: Vec<_> = (0..4).map(|_| v(&[0.2, 0.4, -0.1])).collect();
    let (ident, _) = nt_xent_loss(&same, &[1, 0, 3, 2], 0.07).map_err(e2s)?;
    note(ident, 3f64.ln(), 1e-5);
    let mut queue = KeyQueue::<f64>::new(3).map_err(e2s)?;
    for _ in 0..3 {
        queue.enqueue(&[0.5, 0.5, 0.0, 0.0]).map_err(e2s)?;
    }
    let q = v(&[1., 1., 0., 0.]);
    let (uniform, _) = info_nce_loss(&q, &q, &queue, 0.07).map_err(e2s)?;
    note(uniform, 4f64.ln(), 1e-5);

    // reference values from a direct-summation script
    let z2 = [[0.5, -1.2, 0.3], [0.4, -0.9, 0.8], [-0.7, 0.2, 1.1], [-0.2, 0.6, 0.9]];
    let z2: Vec<_> = z2.iter().map(|r| v(r)).collect();
    note(nt_xent_loss(&z2, &[1, 0, 3, 2], 0.07).map_err(e2s)?.0, 7.019532024084441e-05, 1e-5);
    note(nt_xent_loss(&z2, &[2, 3, 0, 1], 0.07).map_err(e2s)?.0, 13.110429631856622, 1e-5);
    let z3 = [
        [1.0, 0.2, -0.3, 0.5],
        [0.8, 0.1, -0.2, 0.9],
        [-0.4, 1.3, 0.2, 0.0],
        [-0.1, 1.0, 0.6, -0.3],
        [0.3, -0.5, 1.2, 0.7],
        [0.2, -0.8, 0.9, 1.1],
    ];
    let z3: Vec<_> = z3.iter().map(|r| v(r)).collect();
    note(nt_xent_loss(&z3, &[1, 0, 3, 2, 5, 4], 0.5).map_err(e2s)?.0, 0.5010741893576464, 1e-5);
    let mut queue = KeyQueue::<f64>::new(5).map_err(e2s)?;
    for n in [
        [1.0, 0.0, 0.2, -0.3],
        [-0.5, 0.9, 0.1, 0.0],
        [0.1, 0.1, -1.0, 0.4],
        [0.6, -0.6, 0.3, 0.3],
        [-0.2, -0.4, 0.5, 0.9],
    ] {
        queue.enqueue(&n).map_err(e2s)?;
    }
    let (q, kp) = (v(&[0.3, -0.1, 0.8, 0.2]), v(&[0.25, 0.05, 0.7, 0.4]));
    note(info_nce_loss(&q, &kp, &queue, 0.07).map_err(e2s)?.0, 0.017039122565014907, 1e-5);
    note(info_nce_loss(&q, &kp, &queue, 0.2).map_err(e2s)?.0, 0.36319666395755773, 1e-5);

    Ok((
        worst <= 1.0,
        format!("N=1 {single:.1e}, log3 {ident:.6}, log4 {uniform:.6}, worst error {worst:.3} of tolerance"),
    ))
}

fn momentum_and_queue() -> Result<(bool, String), String> {
    let mut cfg = RunConfig::parse(DESK).map_err(e2s)?;
    cfg.synth.n_per_class = 16;
    cfg.validate().map_err(e2s)?;
    let images = synth_dataset(&cfg.synth, 7).map_err(e2s)?.images;
    let model = cfg.model_config();

    let mut laws = Vec::new();
    for m in [1.0, 0.0] {
        let mut pcfg = cfg.pretrain.clone();
        pcfg.m = m;
        let mut pair = MomentumPair::from_query(model.init(3).map_err(e2s)?, m).map_err(e2s)?;
        let start_k = pair.theta_k.clone();
        let start_q = pair.theta_q.clone();
        let mut queue = KeyQueue::new(pcfg.queue_capacity).map_err(e2s)?;
        warmup_queue(&images, &pair, &mut queue, &cfg.augment, &model, pcfg.batch_size, 3).map_err(e2s)?;
        pretrain_epoch(&images, &mut pair, &mut queue, &cfg.augment, &pcfg, &model, 0, 3).map_err(e2s)?;
        let moved = !pair.theta_q.bit_eq(&start_q);
        laws.push(if m == 1.0 {
            moved && pair.theta_k.bit_eq(&start_k)
        } else {
            moved && pair.theta_k.bit_eq(&pair.theta_q)
        });
    }

    let mut rng = Philox::new(11);
    let mut fifo_ok = true;
    for trial in 0..10 {
        let cap = 1 + rng.below(40) as usize;
        let mut queue = KeyQueue::<f64>::new(cap).map_err(e2s)?;
        let mut model_q: VecDeque<Vec<f64>> = VecDeque::new();
        for step in 0..1000u64 {
            let key = vec![1.0 + (trial * 1000 + step) as f64, rng.normal(), rng.normal()];
            let norm = key.iter().map(|x| x * x).sum::<f64>().sqrt();
            queue.enqueue(&key).map_err(e2s)?;
            model_q.push_back(key.iter().map(|x| x / norm).collect());
            if model_q.len() > cap {
                model_q.pop_front();
            }
            let same = queue.len() == model_q.len()
                && queue.inserted() == step + 1
                && queue
                    .iter()
                    .zip(&model_q)
                    .all(|(a, b)| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12));
            fifo_ok &= same && queue.len() <= queue.capacity();
        }
    }
    Ok((
        laws.iter().all(|&b| b) && fifo_ok,
        format!("m=1 frozen {}, m=0 copies {}, fifo over 10^4 inserts {}", laws[0], laws[1], fifo_ok),
    ))
}

fn squared(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2)).sum()
}

fn prototypical() -> Result<(bool, String), String> {
    let synth = SynthConfig {
        n_per_class: 30,
        groups_per_class: 6,
        image_size: 16,
        ..Default::default()
    };
    let mut data = synth_dataset(&synth, 5).map_err(e2s)?.labeled();
    // relabel into four classes so episodes have a real choice
    for (i, s) in data.iter_mut().enumerate() {
        s.label = s.label * 2 + (i / 3) % 2;
        s.group_id = format!("{}-{}", s.group_id, s.label);
    }
    let enc_cfg = EncoderConfig {
        image_size: 16,
        embed_dim: 8,
        ..Default::default()
    };
    let encoder = enc_cfg.init::<f32>(9).map_err(e2s)?;
    let mut meta = protomoco::fewshot::MetaConfig {
        ways: 3,
        shots: 2,
        ..Default::default()
    };

    let (mut agree, mut total, mut worst_sum, mut argmax_same) = (0usize, 0usize, 0.0f64, true);
    let mut rng = Philox::new(21);
    for e in 0..1000 {
        meta.distance = if e % 2 == 0 { Distance::Euclidean } else { Distance::SquaredEuclidean };
        let ep = sample_episode(&data, meta.ways, meta.shots, &mut rng).map_err(e2s)?;
        let preds = predict_episode(&data, &ep, &encoder, &enc_cfg, &meta).map_err(e2s)?;
        let brute = brute_force(&data, &ep, &encoder, &enc_cfg, &meta)?;
        for (p, b) in preds.iter().zip(&brute) {
            total += 1;
            agree += usize::from(p.predicted == *b);
            worst_sum = worst_sum.max((p.posterior.values().sum::<f64>() - 1.0).abs());
        }
        argmax_same &= monotone_invariant(&data, &ep, &encoder, &enc_cfg, &meta)?;
    }
    Ok((
        agree == total && worst_sum <= 1e-6 && argmax_same,
        format!("{agree}/{total} agree, max |sum p - 1| {worst_sum:.1e}, monotone argmax {argmax_same}"),
    ))
}

fn embed_one(
    s: &LabeledSample,
    encoder: &protomoco::ParameterSet<f32>,
    enc_cfg: &EncoderConfig,
    meta: &protomoco::fewshot::MetaConfig,
) -> Result<Vec<f32>, String> {
    Ok(embed_images(enc_cfg, encoder, meta, &[&s.image]).map_err(e2s)?.row(0).to_vec())
}

fn centroids(
    data: &[LabeledSample],
    ep: &Episode,
    encoder: &protomoco::ParameterSet<f32>,
    enc_cfg: &EncoderConfig,
    meta: &protomoco::fewshot::MetaConfig,
) -> Result<Vec<(usize, Vec<f32>)>, String> {
    let mut out = Vec::new();
    for (&class, members) in &ep.support {
        let mut sum = vec![0.0f64; enc_cfg.embed_dim];
        for &i in members {
            for (acc, x) in sum.iter_mut().zip(embed_one(&data[i], encoder, enc_cfg, meta)?) {
                *acc += f64::from(x);
            }
        }
        out.push((class, sum.iter().map(|x| (x / members.len() as f64) as f32).collect()));
    }
    Ok(out)
}

fn brute_force(
    data: &[LabeledSample],
    ep: &Episode,
    encoder: &protomoco::ParameterSet<f32>,
    enc_cfg: &EncoderConfig,
    meta: &protomoco::fewshot::MetaConfig,
) -> Result<Vec<usize>, String> {
    let cents = centroids(data, ep, encoder, enc_cfg, meta)?;
    ep.queries
        .iter()
        .map(|&(q, _)| {
            let h = embed_one(&data[q], encoder, enc_cfg, meta)?;
            let mut best = (usize::MAX, f64::INFINITY);
            for (c, mu) in &cents {
                let d = squared(&h, mu);
                if d < best.1 {
                    best = (*c, d);
                }
            }
            Ok(best.0)
        })
        .collect()
}

/// The most probable class is the same whether the posterior is built from
/// d, d^2, or any other increasing function of the distance.
fn monotone_invariant(
    data: &[LabeledSample],
    ep: &Episode,
    encoder: &protomoco::ParameterSet<f32>,
    enc_cfg: &EncoderConfig,
    meta: &protomoco::fewshot::MetaConfig,
) -> Result<bool, String> {
    let cents = centroids(data, ep, encoder, enc_cfg, meta)?;
    let rows: BTreeMap<usize, Vec<Vec<f32>>> = cents.iter().map(|(c, mu)| (*c, vec![mu.clone()])).collect();
    let protos = prototypes_from_embeddings(&rows).map_err(e2s)?;
    let argmax = |p: &BTreeMap<usize, f64>| {
        p.iter()
            .fold((usize::MAX, f64::NEG_INFINITY), |b, (&c, &v)| if v > b.1 { (c, v) } else { b })
            .0
    };
    for &(q, _) in &ep.queries {
        let h = embed_one(&data[q], encoder, enc_cfg, meta)?;
        let a = argmax(&class_posterior(&h, &protos, Distance::Euclidean).map_err(e2s)?);
        let b = argmax(&class_posterior(&h, &protos, Distance::SquaredEuclidean).map_err(e2s)?);
        let transformed = |f: fn(f64) -> f64| {
            cents
                .iter()
                .map(|(c, mu)| (*c, f(squared(&h, mu).sqrt())))
                .fold((usize::MAX, f64::INFINITY), |b, (c, d)| if d < b.1 { (c, d) } else { b })
                .0
        };
        let others = [transformed(f64::exp), transformed(f64::ln_1p), transformed(|d| 3.0 * d + 1.0)];
        if a != b || others.iter().any(|&c| c != a) {
            return Ok(false);
        }
    }
    Ok(true)
}

struct Desk {
    dir: tempfile::TempDir,
    cfg: RunConfig,
    pair: MomentumPair<f32>,
}

impl Desk {
    fn ckpt(&self) -> PathBuf {
        self.dir.path().join("pretrain").join(pipeline::CHECKPOINT)
    }
}

fn desk_setup() -> Result<(Desk, f64), String> {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(e2s)?;
    let cfg = desk(&dir.path().join("data"))?;
    pipeline::cmd_synth(&cfg, &dir.path().join("data")).map_err(e2s)?;
    let out = pipeline::cmd_pretrain(&cfg, &dir.path().join("pretrain")).map_err(e2s)?;
    Ok((Desk { dir, cfg, pair: out.pair }, start.elapsed().as_secs_f64()))
}

fn end_to_end(d: &Desk, pretrain_secs: f64) -> Result<(bool, String), String> {
    let start = Instant::now();
    let ckpt = d.ckpt();
    let pre = pipeline::cmd_eval(&d.cfg, Some(&ckpt), &d.dir.path().join("eval_pre")).map_err(e2s)?;
    let rnd = pipeline::cmd_eval(&d.cfg, None, &d.dir.path().join("eval_rnd")).map_err(e2s)?;
    let (a, _) = pre.accuracy().ok_or("no folds evaluated")?;
    let (b, _) = rnd.accuracy().ok_or("no folds evaluated")?;
    let secs = pretrain_secs + start.elapsed().as_secs_f64();
    let folds = pre.folds.len();
    Ok((
        a >= 0.85 && a - b >= 0.10 && folds == 10 && secs < 900.0,
        format!(
            "pretrained {a:.4}, random init {b:.4}, margin {:.4} (need >= 0.85 and >= 0.10), {folds} folds, {secs:.0}s",
            a - b
        ),
    ))
}

fn shot_scaling(d: &Desk) -> Result<(bool, String), String> {
    let ckpt = d.ckpt();
    let mut means = Vec::new();
    for shots in [1, 4] {
        let mut sum = 0.0;
        for seed in 0..10 {
            let mut cfg = d.cfg.clone();
            cfg.seed = seed;
            cfg.meta.shots = shots;
            let out = d.dir.path().join(format!("shots{shots}_{seed}"));
            let s = pipeline::cmd_eval(&cfg, Some(&ckpt), &out).map_err(e2s)?;
            sum += s.accuracy().ok_or("no folds evaluated")?.0;
        }
        means.push(sum / 10.0);
    }
    Ok((
        means[1] >= means[0],
        format!("2W1S {:.4}, 2W4S {:.4} over 10 seeds", means[0], means[1]),
    ))
}

fn held_out_gap(d: &Desk) -> Result<(bool, String), String> {
    let held_out = synth_dataset(&d.cfg.synth, d.cfg.seed + 1000).map_err(e2s)?.images;
    let batch = &held_out[..64];
    let (pos, neg) =
        similarity_gap(batch, &d.pair, &d.cfg.augment, &d.cfg.model_config(), d.cfg.seed).map_err(e2s)?;
    Ok((
        pos - neg >= 0.2,
        format!("positive {pos:.3}, negative {neg:.3}, gap {:.3}", pos - neg),
    ))
}

struct Always(usize);

impl EpisodeClassifier for Always {
    fn classify(&self, _: &[LabeledSample], ep: &Episode) -> protomoco::Result<Vec<Prediction>> {
        Ok(ep
            .queries
            .iter()
            .map(|&(sample, truth)| Prediction {
                sample,
                truth,
                predicted: self.0,
                posterior: ep.classes.iter().map(|&c| (c, if c == self.0 { 1.0 } else { 0.0 })).collect(),
            })
            .collect())
    }
}

fn metrics_oracles() -> Result<(bool, String), String> {
    let mut rng = Philox::new(17);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = 2 + rng.below(60) as usize;
        let levels = 1 + rng.below(12);
        let mut set: Vec<ScoredSample> = (0..n)
            .map(|_| ScoredSample {
                score: rng.below(levels) as f64 / levels as f64,
                truth: rng.next_f64() < 0.5,
            })
            .collect();
        set[0].truth = true;
        set[1].truth = false;
        let auc = roc_auc(&set).map_err(e2s)?;
        let (mut wins, mut pairs) = (0.0, 0.0);
        for p in set.iter().filter(|s| s.truth) {
            for q in set.iter().filter(|s| !s.truth) {
                pairs += 1.0;
                wins += if p.score > q.score {
                    1.0
                } else if p.score == q.score {
                    0.5
                } else {
                    0.0
                };
            }
        }
        worst = worst.max((auc - wins / pairs).abs());
    }

    let synth = SynthConfig {
        image_size: 8,
        n_per_class: 40,
        ..Default::default()
    };
    let data = synth_dataset(&synth, 3).map_err(e2s)?.labeled();
    let cfg = EvalConfig {
        folds: 10,
        episodes: 20,
        finetune: false,
        ..Default::default()
    };
    let s = evaluate_with(&data, 2, 1, &cfg, 5, |_, _| Ok(Always(0))).map_err(e2s)?;
    let (acc, _) = s.accuracy().ok_or("no folds evaluated")?;
    let exact = acc == 0.5 && s.folds.iter().all(|f| f.accuracy == 0.5);
    Ok((
        worst <= 1e-9 && exact,
        format!("max |auc - mann-whitney| {worst:.1e} over 100 sets, constant predictor accuracy {acc}"),
    ))
}

fn outputs(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(e2s)? {
            let path = entry.map_err(e2s)?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != pipeline::TIMING) {
                let rel = path.strip_prefix(dir).map_err(e2s)?.display().to_string();
                out.insert(rel, fs::read(&path).map_err(e2s)?);
            }
        }
    }
    Ok(out)
}

fn run_all(root: &Path, config: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let data = root.join("data");
    let conf = config.to_str().ok_or("non-utf8 path")?;
    let steps: Vec<Vec<String>> = vec![
        vec!["synth-data".into(), "--out".into(), data.display().to_string()],
        vec!["pretrain".into(), "--out".into(), root.join("pre").display().to_string()],
        vec![
            "fewshot".into(),
            "--out".into(),
            root.join("few").display().to_string(),
            "--checkpoint".into(),
            root.join("pre").join(pipeline::CHECKPOINT).display().to_string(),
        ],
        vec![
            "eval".into(),
            "--out".into(),
            root.join("eval").display().to_string(),
            "--checkpoint".into(),
            root.join("few").join(pipeline::FINETUNED).display().to_string(),
        ],
        vec!["gradcheck".into(), "--out".into(), root.join("grad").display().to_string()],
    ];
    for args in steps {
        let status = bin().args(&args).args(["--config", conf]).output().map_err(e2s)?.status;
        if !status.success() {
            return Err(format!("`{}` exited with {status}", args[0]));
        }
    }
    outputs(root)
}

fn determinism() -> Result<(bool, String), String> {
    let dir = tempfile::tempdir().map_err(e2s)?;
    let mut cfg = desk(&dir.path().join("data"))?;
    cfg.synth.n_per_class = 40;
    cfg.pretrain.epochs = 2;
    cfg.meta.episodes = 20;
    cfg.eval.episodes = 10;
    cfg.gradcheck.instances = 2;
    let conf = dir.path().join("small.conf");
    fs::write(&conf, cfg.to_text()).map_err(e2s)?;

    let mut runs = Vec::new();
    for r in 0..2 {
        let root = dir.path().join(format!("run{r}"));
        let mut c = cfg.clone();
        c.data.root = Some(root.join("data"));
        let conf = root.join("run.conf");
        fs::create_dir_all(&root).map_err(e2s)?;
        fs::write(&conf, c.to_text()).map_err(e2s)?;
        runs.push(run_all(&root, &conf)?);
    }
    // text outputs echo the run directory; binary outputs compare raw
    let strip = |m: &BTreeMap<String, Vec<u8>>, r: &str| -> BTreeMap<String, Vec<u8>> {
        m.iter()
            .map(|(k, v)| {
                let v = match std::str::from_utf8(v) {
                    Ok(s) => s.replace(r, "<run>").into_bytes(),
                    Err(_) => v.clone(),
                };
                (k.clone(), v)
            })
            .collect()
    };
    let a = strip(&runs[0], &dir.path().join("run0").display().to_string());
    let b = strip(&runs[1], &dir.path().join("run1").display().to_string());
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();

    // the echoed configuration regenerates the report exactly
    let run0 = dir.path().join("run0");
    let echoed = run0.join("eval").join(pipeline::CONFIG_ECHO);
    let status = bin()
        .args(["eval", "--config"])
        .arg(&echoed)
        .arg("--out")
        .arg(run0.join("eval_again"))
        .arg("--checkpoint")
        .arg(run0.join("few").join(pipeline::FINETUNED))
        .output()
        .map_err(e2s)?
        .status;
    let same_report = status.success()
        && [pipeline::REPORT_TXT, pipeline::REPORT_CSV].iter().all(|f| {
            fs::read(run0.join("eval").join(f)).ok() == fs::read(run0.join("eval_again").join(f)).ok()
        });
    Ok((
        differing.is_empty() && a.len() == b.len() && same_report,
        format!(
            "{} files compared across two runs, {} differ, report regenerated from echo identical: {same_report}",
            a.len(),
            differing.len()
        ),
    ))
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut results = vec![
        check("gradient suite", gradient_suite),
        check("loss oracles", loss_oracles),
        check("momentum and queue laws", momentum_and_queue),
        check("prototypical correctness", prototypical),
    ];
    match desk_setup() {
        Ok((d, secs)) => {
            results.push(check("end-to-end desk run", || end_to_end(&d, secs)));
            results.push(check("shot scaling", || shot_scaling(&d)));
            results.push(check("held-out similarity gap", || held_out_gap(&d)));
        }
        Err(e) => {
            for name in ["end-to-end desk run", "shot scaling", "held-out similarity gap"] {
                results.push(check(name, || Err(e.clone())));
            }
        }
    }
    results.push(check("metrics oracles", metrics_oracles));
    results.push(check("determinism", determinism));

    let failed: Vec<&str> = results.iter().filter(|o| !o.passed).map(|o| o.name).collect();
    println!(
        "{} of {} criteria pass ({:.0}s)",
        results.len() - failed.len(),
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failing: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
