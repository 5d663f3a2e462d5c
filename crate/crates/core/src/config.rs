//! Run configuration: a flat text file of `section.key = value` lines.
//!
//! Blank lines and lines starting with `#` are ignored. Keys not listed in
//! [`KEYS`] are rejected, as are repeated keys. Unset keys keep their
//! defaults. [`RunConfig::to_text`] writes every key in a fixed order, and
//! parsing that text yields the same configuration.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::augment::AugmentationSpec;
use crate::contrastive::{ModelConfig, PretrainConfig};
use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::fewshot::MetaConfig;
use crate::gradcheck::GradcheckConfig;
use crate::nn::{EncoderArch, EncoderConfig};
use crate::pipeline::EvalConfig;

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "run.seed",
    "data.root",
    "data.pretrain_root",
    "data.image_size",
    "data.channels",
    "synth.n_per_class",
    "synth.classes",
    "synth.groups_per_class",
    "synth.center_jitter",
    "synth.amplitude_min",
    "synth.amplitude_max",
    "synth.shape_spread",
    "aug.crop_min",
    "aug.crop_max",
    "aug.flip_p",
    "aug.jitter",
    "aug.method_weights",
    "model.arch",
    "model.filters",
    "model.kernels",
    "model.pool",
    "model.global_pool",
    "model.hidden",
    "model.embed_dim",
    "model.head_hidden",
    "model.proj_dim",
    "pretrain.tau",
    "pretrain.batch",
    "pretrain.epochs",
    "pretrain.queue_k",
    "pretrain.m",
    "pretrain.lr",
    "pretrain.momentum",
    "pretrain.weight_decay",
    "pretrain.lr_drops",
    "meta.ways",
    "meta.shots",
    "meta.episodes",
    "meta.distance",
    "meta.loss",
    "meta.normalize",
    "meta.lr",
    "meta.momentum",
    "meta.weight_decay",
    "meta.lr_drops",
    "eval.folds",
    "eval.episodes",
    "eval.queries",
    "eval.finetune",
    "eval.positive_class",
    "eval.label_groups",
    "gradcheck.instances",
    "gradcheck.tolerance",
    "gradcheck.precision",
    "gradcheck.fault",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
    Both,
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "f32" => Ok(Self::F32),
            "f64" => Ok(Self::F64),
            "both" => Ok(Self::Both),
            _ => Err(format!("expected f32, f64 or both, got `{s}`")),
        }
    }
}

impl Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::F32 => "f32",
            Self::F64 => "f64",
            Self::Both => "both",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    /// Labeled dataset directory.
    pub root: Option<PathBuf>,
    /// Unlabeled pretraining corpus; defaults to `root` with labels ignored.
    pub pretrain_root: Option<PathBuf>,
    pub image_size: usize,
    pub channels: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            root: None,
            pretrain_root: None,
            image_size: 32,
            channels: 1,
        }
    }
}

/// Encoder and head settings. Conv and MLP settings are both kept so that
/// key order does not matter; `arch` picks which one is used.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSection {
    pub arch: String,
    pub filters: Vec<usize>,
    pub kernels: Vec<usize>,
    pub pool: usize,
    pub global_pool: bool,
    pub hidden: usize,
    pub embed_dim: usize,
    pub head_hidden: usize,
    pub proj_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        let EncoderArch::Conv {
            filters,
            kernels,
            pool,
            global_pool,
        } = m.encoder.arch
        else {
            unreachable!("default encoder is convolutional")
        };
        Self {
            arch: "conv".into(),
            filters,
            kernels,
            pool,
            global_pool,
            hidden: 128,
            embed_dim: m.encoder.embed_dim,
            head_hidden: m.head_hidden,
            proj_dim: m.proj_dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub augment: AugmentationSpec,
    pub model: ModelSection,
    pub pretrain: PretrainConfig,
    pub meta: MetaConfig,
    pub eval: EvalConfig,
    pub gradcheck: GradcheckConfig,
    pub gradcheck_precision: Precision,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = Self {
            seed: 0,
            data: DataConfig::default(),
            synth: SynthConfig::default(),
            augment: AugmentationSpec::default(),
            model: ModelSection::default(),
            pretrain: PretrainConfig::default(),
            meta: MetaConfig::default(),
            eval: EvalConfig::default(),
            gradcheck: GradcheckConfig::default(),
            gradcheck_precision: Precision::Both,
        };
        cfg.sync();
        cfg
    }
}

fn parse<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: Display,
{
    v.parse::<T>().map_err(|e| format!("`{v}`: {e}"))
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("`{v}`: expected true or false")),
    }
}

fn parse_list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: Display,
{
    v.split(',').map(|x| parse(x.trim())).collect()
}

fn list<T: Display>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// `"120:0.1,160:0.1"`; empty means no drops.
fn parse_drops(v: &str) -> std::result::Result<Vec<(usize, f64)>, String> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|item| {
            let (e, m) = item
                .split_once(':')
                .ok_or_else(|| format!("`{item}`: expected epoch:multiplier"))?;
            Ok((parse(e.trim())?, parse(m.trim())?))
        })
        .collect()
}

fn drops(xs: &[(usize, f64)]) -> String {
    xs.iter().map(|(e, m)| format!("{e}:{m}")).collect::<Vec<_>>().join(",")
}

fn path_or_empty(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or(String::new(), |p| p.display().to_string())
}

fn optional_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    /// Copies the shared image size into the synthetic-data section.
    fn sync(&mut self) {
        self.synth.image_size = self.data.image_size;
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        let arch = if m.arch == "mlp" {
            EncoderArch::Mlp { hidden: m.hidden }
        } else {
            EncoderArch::Conv {
                filters: m.filters.clone(),
                kernels: m.kernels.clone(),
                pool: m.pool,
                global_pool: m.global_pool,
            }
        };
        ModelConfig {
            encoder: EncoderConfig {
                channels: self.data.channels,
                image_size: self.data.image_size,
                arch,
                embed_dim: m.embed_dim,
            },
            head_hidden: m.head_hidden,
            proj_dim: m.proj_dim,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line_no}: expected `key = value`")))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Config(format!("line {line_no}: unknown key `{key}`")));
            }
            if let Some(first) = seen.insert(key.to_string(), line_no) {
                return Err(Error::Config(format!(
                    "line {line_no}: key `{key}` already set on line {first}"
                )));
            }
            cfg.set(key, value)
                .map_err(|m| Error::Config(format!("line {line_no}: {key}: {m}")))?;
        }
        cfg.sync();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        match key {
            "run.seed" => self.seed = parse(v)?,
            "data.root" => self.data.root = optional_path(v),
            "data.pretrain_root" => self.data.pretrain_root = optional_path(v),
            "data.image_size" => self.data.image_size = parse(v)?,
            "data.channels" => self.data.channels = parse(v)?,
            "synth.n_per_class" => self.synth.n_per_class = parse(v)?,
            "synth.classes" => self.synth.classes = parse(v)?,
            "synth.groups_per_class" => self.synth.groups_per_class = parse(v)?,
            "synth.center_jitter" => self.synth.center_jitter = parse(v)?,
            "synth.amplitude_min" => self.synth.amplitude.0 = parse(v)?,
            "synth.amplitude_max" => self.synth.amplitude.1 = parse(v)?,
            "synth.shape_spread" => self.synth.shape_spread = parse(v)?,
            "aug.crop_min" => self.augment.crop_area_range.0 = parse(v)?,
            "aug.crop_max" => self.augment.crop_area_range.1 = parse(v)?,
            "aug.flip_p" => self.augment.flip_probability = parse(v)?,
            "aug.jitter" => self.augment.jitter_strength = parse(v)?,
            "aug.method_weights" => {
                let w: Vec<f64> = parse_list(v)?;
                if w.len() != 2 {
                    return Err(format!("`{v}`: expected two weights"));
                }
                self.augment.method_weights = (w[0], w[1]);
            }
            "model.arch" => {
                if v != "conv" && v != "mlp" {
                    return Err(format!("`{v}`: expected conv or mlp"));
                }
                self.model.arch = v.to_string();
            }
            "model.filters" => self.model.filters = parse_list(v)?,
            "model.kernels" => self.model.kernels = parse_list(v)?,
            "model.pool" => self.model.pool = parse(v)?,
            "model.global_pool" => self.model.global_pool = parse_bool(v)?,
            "model.hidden" => self.model.hidden = parse(v)?,
            "model.embed_dim" => self.model.embed_dim = parse(v)?,
            "model.head_hidden" => self.model.head_hidden = parse(v)?,
            "model.proj_dim" => self.model.proj_dim = parse(v)?,
            "pretrain.tau" => self.pretrain.tau = parse(v)?,
            "pretrain.batch" => self.pretrain.batch_size = parse(v)?,
            "pretrain.epochs" => self.pretrain.epochs = parse(v)?,
            "pretrain.queue_k" => self.pretrain.queue_capacity = parse(v)?,
            "pretrain.m" => self.pretrain.m = parse(v)?,
            "pretrain.lr" => self.pretrain.sgd.learning_rate = parse(v)?,
            "pretrain.momentum" => self.pretrain.sgd.momentum = parse(v)?,
            "pretrain.weight_decay" => self.pretrain.sgd.weight_decay = parse(v)?,
            "pretrain.lr_drops" => self.pretrain.sgd.schedule = parse_drops(v)?,
            "meta.ways" => self.meta.ways = parse(v)?,
            "meta.shots" => self.meta.shots = parse(v)?,
            "meta.episodes" => self.meta.episodes = parse(v)?,
            "meta.distance" => self.meta.distance = parse(v)?,
            "meta.loss" => self.meta.loss = parse(v)?,
            "meta.normalize" => self.meta.normalize = parse_bool(v)?,
            "meta.lr" => self.meta.sgd.learning_rate = parse(v)?,
            "meta.momentum" => self.meta.sgd.momentum = parse(v)?,
            "meta.weight_decay" => self.meta.sgd.weight_decay = parse(v)?,
            "meta.lr_drops" => self.meta.sgd.schedule = parse_drops(v)?,
            "eval.folds" => self.eval.folds = parse(v)?,
            "eval.episodes" => self.eval.episodes = parse(v)?,
            "eval.queries" => self.eval.queries_per_class = parse(v)?,
            "eval.finetune" => self.eval.finetune = parse_bool(v)?,
            "eval.positive_class" => self.eval.positive_class = parse(v)?,
            "eval.label_groups" => self.eval.label_groups = parse(v)?,
            "gradcheck.instances" => self.gradcheck.instances = parse(v)?,
            "gradcheck.tolerance" => self.gradcheck.tolerance = parse(v)?,
            "gradcheck.precision" => self.gradcheck_precision = parse(v)?,
            "gradcheck.fault" => self.gradcheck.fault = (!v.is_empty()).then(|| v.to_string()),
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Value of `key` as it would be written in a config file.
    pub fn get(&self, key: &str) -> Option<String> {
        let m = &self.model;
        Some(match key {
            "run.seed" => self.seed.to_string(),
            "data.root" => path_or_empty(&self.data.root),
            "data.pretrain_root" => path_or_empty(&self.data.pretrain_root),
            "data.image_size" => self.data.image_size.to_string(),
            "data.channels" => self.data.channels.to_string(),
            "synth.n_per_class" => self.synth.n_per_class.to_string(),
            "synth.classes" => self.synth.classes.to_string(),
            "synth.groups_per_class" => self.synth.groups_per_class.to_string(),
            "synth.center_jitter" => self.synth.center_jitter.to_string(),
            "synth.amplitude_min" => self.synth.amplitude.0.to_string(),
            "synth.amplitude_max" => self.synth.amplitude.1.to_string(),
            "synth.shape_spread" => self.synth.shape_spread.to_string(),
            "aug.crop_min" => self.augment.crop_area_range.0.to_string(),
            "aug.crop_max" => self.augment.crop_area_range.1.to_string(),
            "aug.flip_p" => self.augment.flip_probability.to_string(),
            "aug.jitter" => self.augment.jitter_strength.to_string(),
            "aug.method_weights" => list(&[self.augment.method_weights.0, self.augment.method_weights.1]),
            "model.arch" => m.arch.clone(),
            "model.filters" => list(&m.filters),
            "model.kernels" => list(&m.kernels),
            "model.pool" => m.pool.to_string(),
            "model.global_pool" => m.global_pool.to_string(),
            "model.hidden" => m.hidden.to_string(),
            "model.embed_dim" => m.embed_dim.to_string(),
            "model.head_hidden" => m.head_hidden.to_string(),
            "model.proj_dim" => m.proj_dim.to_string(),
            "pretrain.tau" => self.pretrain.tau.to_string(),
            "pretrain.batch" => self.pretrain.batch_size.to_string(),
            "pretrain.epochs" => self.pretrain.epochs.to_string(),
            "pretrain.queue_k" => self.pretrain.queue_capacity.to_string(),
            "pretrain.m" => self.pretrain.m.to_string(),
            "pretrain.lr" => self.pretrain.sgd.learning_rate.to_string(),
            "pretrain.momentum" => self.pretrain.sgd.momentum.to_string(),
            "pretrain.weight_decay" => self.pretrain.sgd.weight_decay.to_string(),
            "pretrain.lr_drops" => drops(&self.pretrain.sgd.schedule),
            "meta.ways" => self.meta.ways.to_string(),
            "meta.shots" => self.meta.shots.to_string(),
            "meta.episodes" => self.meta.episodes.to_string(),
            "meta.distance" => self.meta.distance.to_string(),
            "meta.loss" => self.meta.loss.to_string(),
            "meta.normalize" => self.meta.normalize.to_string(),
            "meta.lr" => self.meta.sgd.learning_rate.to_string(),
            "meta.momentum" => self.meta.sgd.momentum.to_string(),
            "meta.weight_decay" => self.meta.sgd.weight_decay.to_string(),
            "meta.lr_drops" => drops(&self.meta.sgd.schedule),
            "eval.folds" => self.eval.folds.to_string(),
            "eval.episodes" => self.eval.episodes.to_string(),
            "eval.queries" => self.eval.queries_per_class.to_string(),
            "eval.finetune" => self.eval.finetune.to_string(),
            "eval.positive_class" => self.eval.positive_class.to_string(),
            "eval.label_groups" => self.eval.label_groups.to_string(),
            "gradcheck.instances" => self.gradcheck.instances.to_string(),
            "gradcheck.tolerance" => self.gradcheck.tolerance.to_string(),
            "gradcheck.precision" => self.gradcheck_precision.to_string(),
            "gradcheck.fault" => self.gradcheck.fault.clone().unwrap_or_default(),
            _ => return None,
        })
    }

    /// Every key with its value, in [`KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        KEYS.iter().map(|&k| (k, self.get(k).expect("listed key"))).collect()
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Checks every section; all failures are config errors.
    pub fn validate(&self) -> Result<()> {
        let wrap = |section: &str, r: Result<()>| {
            r.map_err(|e| match e {
                Error::Config(m) => Error::Config(m),
                other => Error::Config(format!("{section}: {other}")),
            })
        };
        if self.data.channels != 1 && self.data.channels != 3 {
            return Err(Error::Config(format!("data.channels must be 1 or 3, got {}", self.data.channels)));
        }
        if self.data.image_size < 8 {
            return Err(Error::Config(format!("data.image_size must be at least 8, got {}", self.data.image_size)));
        }
        wrap("aug", self.augment.validate())?;
        wrap("model", self.model_config().weights().map(|_| ()))?;
        if self.model.embed_dim == 0 || self.model.head_hidden == 0 || self.model.proj_dim == 0 {
            return Err(Error::Config("model dimensions must be at least 1".into()));
        }
        wrap("pretrain", self.pretrain.validate())?;
        wrap("meta", self.meta.validate())?;
        wrap("eval", self.eval.validate())?;
        wrap("gradcheck", self.gradcheck.validate())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.seed = 42;
        cfg.data.root = Some(PathBuf::from("data/set"));
        cfg.augment.crop_area_range = (0.2, 1.0);
        cfg.pretrain.tau = 0.12;
        cfg.pretrain.sgd.schedule = vec![(3, 0.5)];
        cfg.meta.sgd.schedule.clear();
        cfg.model.arch = "mlp".into();
        cfg.gradcheck.fault = Some("relu".into());
        let text = cfg.to_text();
        assert_eq!(text.lines().count(), KEYS.len());
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(RunConfig::parse("# nothing\n\n").unwrap(), RunConfig::default());
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn overrides_apply() {
        let cfg = RunConfig::parse(
            "run.seed = 7\npretrain.lr_drops = 120:0.1, 160:0.1\nmeta.distance = squared-euclidean\ndata.image_size = 16\nmodel.kernels = 3,2\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.pretrain.sgd.schedule, vec![(120, 0.1), (160, 0.1)]);
        assert_eq!(cfg.meta.distance, crate::fewshot::Distance::SquaredEuclidean);
        assert_eq!(cfg.model_config().encoder.image_size, 16);
        assert_eq!(cfg.synth.image_size, 16);
    }

    #[test]
    fn rejects_bad_input_with_line_numbers() {
        let cases = [
            ("run.seed = 1\npretrain.tua = 0.1\n", "line 2: unknown key `pretrain.tua`"),
            ("run.seed = 1\nrun.seed = 2\n", "already set on line 1"),
            ("meta.ways\n", "line 1: expected"),
            ("pretrain.batch = -3\n", "pretrain.batch"),
            ("meta.normalize = yes\n", "expected true or false"),
            ("pretrain.tau = 0\n", "tau"),
            ("aug.crop_min = 0.9\naug.crop_max = 0.5\n", "crop"),
            ("model.arch = resnet\n", "conv or mlp"),
            ("model.kernels = 3,9\n", "model"),
            ("eval.folds = 1\n", "eval.folds"),
            ("gradcheck.fault = nope\n", "unknown op"),
        ];
        for (text, needle) in cases {
            let err = RunConfig::parse(text).unwrap_err();
            assert!(err.is_config(), "{text}: {err:?}");
            assert!(err.to_string().contains(needle), "{text}: {err}");
        }
    }

    #[test]
    fn shipped_configs_parse() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        }
    }
}
