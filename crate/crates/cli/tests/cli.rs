use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use protomoco::checkpoint;
use protomoco::config::RunConfig;
use protomoco::pipeline::{CHECKPOINT, EPISODE_LOG, FINETUNED, PRETRAIN_LOG};

fn protomoco(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_protomoco"))
        .args(args)
        .env_remove("PROTOMOCO_THREADS")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &[(&str, &str)] = &[
    ("data.image_size", "16"),
    ("synth.n_per_class", "20"),
    ("model.filters", "4,8"),
    ("model.kernels", "3,2"),
    ("model.embed_dim", "16"),
    ("model.head_hidden", "16"),
    ("model.proj_dim", "8"),
    ("pretrain.queue_k", "32"),
];

/// Writes a small-model config with data under `dir`; keys set in `extra`
/// replace the small defaults.
fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join(format!("run{}.conf", fs::read_dir(dir).unwrap().count()));
    let mut text = format!("data.root = {}\n", dir.join("data").display());
    for (k, v) in SMALL {
        if !extra.lines().any(|l| l.split('=').next().map(str::trim) == Some(k)) {
            text.push_str(&format!("{k} = {v}\n"));
        }
    }
    text.push_str(extra);
    fs::write(&path, text).unwrap();
    path
}

fn synth(dir: &Path, conf: &Path) {
    let out = protomoco(&["synth-data", "--config", s(conf), "--out", s(&dir.join("data"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let conf = small_config(dir.path(), "pretrain.temprature = 0.1\n");
    let out = protomoco(&["pretrain", "--config", s(&conf), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("pretrain.temprature"), "{}", stderr(&out));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn invalid_value_and_usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let conf = small_config(dir.path(), "pretrain.tau = -1\n");
    let out = protomoco(&["pretrain", "--config", s(&conf), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert_eq!(code(&protomoco(&["pretrain"])), 2);
    assert_eq!(code(&protomoco(&["frobnicate"])), 2);
    let out = protomoco(&["eval", "--config", s(&dir.path().join("absent.conf")), "--out", "x"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn bad_thread_count_exits_2() {
    let out = Command::new(env!("CARGO_BIN_EXE_protomoco"))
        .args(["gradcheck"])
        .env("PROTOMOCO_THREADS", "abc")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("PROTOMOCO_THREADS"));
}

#[test]
fn missing_dataset_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let conf = small_config(dir.path(), "");
    let out = protomoco(&["eval", "--config", s(&conf), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("manifest"), "{}", stderr(&out));
}

#[test]
fn gradcheck_passes_and_catches_a_fault() {
    let dir = tempfile::tempdir().unwrap();
    let conf = small_config(dir.path(), "gradcheck.instances = 3\n");
    let out = protomoco(&["gradcheck", "--config", s(&conf), "--out", s(&dir.path().join("g"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = fs::read_to_string(dir.path().join("g/gradcheck.txt")).unwrap();
    for op in ["matmul", "conv2d", "info_nce", "meta_loss[softmax-nll]", "meta_loss[nearest-rival]"] {
        assert!(table.contains(op), "{op} missing");
    }
    assert!(!table.contains("FAIL"));

    let conf = small_config(dir.path(), "gradcheck.instances = 3\ngradcheck.fault = matmul\n");
    let out = protomoco(&["gradcheck", "--config", s(&conf)]);
    assert_eq!(code(&out), 3);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let failing: Vec<&str> = stdout.lines().filter(|l| l.ends_with("FAIL")).collect();
    assert_eq!(failing.len(), 2, "{stdout}");
    assert!(failing.iter().all(|l| l.starts_with("matmul ")));
}

#[test]
fn synth_data_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let conf = small_config(dir.path(), "");
    let read = |d: &str| -> Vec<(String, Vec<u8>)> {
        let mut files: Vec<_> = fs::read_dir(dir.path().join(d))
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
            })
            .collect();
        files.sort();
        files
    };
    for (d, seed) in [("a", "5"), ("b", "5"), ("c", "6")] {
        let out = protomoco(&["synth-data", "--config", s(&conf), "--seed", seed, "--out", s(&dir.path().join(d))]);
        assert_eq!(code(&out), 0);
    }
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
    assert_eq!(read("a").len(), 41);
}

#[test]
fn zero_epochs_and_zero_episodes_leave_weights_alone() {
    let dir = tempfile::tempdir().unwrap();
    let conf = small_config(dir.path(), "run.seed = 9\npretrain.epochs = 0\nmeta.episodes = 0\n");
    synth(dir.path(), &conf);
    let pre = dir.path().join("pre");
    assert_eq!(code(&protomoco(&["pretrain", "--config", s(&conf), "--out", s(&pre)])), 0);
    let saved = checkpoint::load(&pre.join(CHECKPOINT)).unwrap();
    let cfg = RunConfig::load(&conf).unwrap();
    assert!(saved.bit_eq(&cfg.model_config().init(9).unwrap()));

    let few = dir.path().join("few");
    let out = protomoco(&[
        "fewshot",
        "--config",
        s(&conf),
        "--out",
        s(&few),
        "--checkpoint",
        s(&pre.join(CHECKPOINT)),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read(pre.join(CHECKPOINT)).unwrap(), fs::read(few.join(FINETUNED)).unwrap());
}

#[test]
fn mismatched_checkpoint_names_both_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let wide = small_config(dir.path(), "pretrain.epochs = 0\nmodel.embed_dim = 24\n");
    synth(dir.path(), &wide);
    let pre = dir.path().join("pre");
    assert_eq!(code(&protomoco(&["pretrain", "--config", s(&wide), "--out", s(&pre)])), 0);

    let narrow = small_config(dir.path(), "");
    let ckpt = pre.join(CHECKPOINT);
    for cmd in ["fewshot", "eval"] {
        let out = protomoco(&[cmd, "--config", s(&narrow), "--out", s(&dir.path().join(cmd)), "--checkpoint", s(&ckpt)]);
        assert_eq!(code(&out), 3);
        let err = stderr(&out);
        assert!(err.contains("`enc.dense` is incompatible"), "{err}");
        assert!(err.contains("expected shape [72, 16], found [72, 24]"), "{err}");
    }
}

#[test]
fn pretrain_loss_falls_over_thirty_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let conf = small_config(dir.path(), "synth.n_per_class = 32\npretrain.epochs = 30\n");
    synth(dir.path(), &conf);
    let pre = dir.path().join("pre");
    let out = protomoco(&["pretrain", "--config", s(&conf), "--out", s(&pre)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let log = fs::read_to_string(pre.join(PRETRAIN_LOG)).unwrap();
    let mut rows = csv::Reader::from_reader(log.as_bytes());
    let loss: Vec<f64> = rows.records().map(|r| r.unwrap()[2].parse().unwrap()).collect();
    assert_eq!(loss.len(), 30);
    assert!(loss[29] < loss[0], "{loss:?}");
}

#[test]
fn fewshot_accuracy_does_not_degrade() {
    let dir = tempfile::tempdir().unwrap();
    let conf = small_config(dir.path(), "pretrain.epochs = 0\nmeta.episodes = 200\nmeta.lr = 0.003\nmeta.lr_drops =\n");
    synth(dir.path(), &conf);
    let pre = dir.path().join("pre");
    assert_eq!(code(&protomoco(&["pretrain", "--config", s(&conf), "--out", s(&pre)])), 0);
    let few = dir.path().join("few");
    let out = protomoco(&[
        "fewshot",
        "--config",
        s(&conf),
        "--out",
        s(&few),
        "--checkpoint",
        s(&pre.join(CHECKPOINT)),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let log = fs::read_to_string(few.join(EPISODE_LOG)).unwrap();
    let mut rows = csv::Reader::from_reader(log.as_bytes());
    let acc: Vec<f64> = rows.records().map(|r| r.unwrap()[2].parse().unwrap()).collect();
    assert_eq!(acc.len(), 200);
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    assert!(mean(&acc[150..]) >= mean(&acc[..50]), "{} vs {}", mean(&acc[..50]), mean(&acc[150..]));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let conf = small_config(dir.path(), "run.seed = 1\npretrain.epochs = 0\n");
    synth(dir.path(), &conf);
    let out = protomoco(&["pretrain", "--config", s(&conf), "--seed", "77", "--out", s(&dir.path().join("p"))]);
    assert_eq!(code(&out), 0);
    let echo = fs::read_to_string(dir.path().join("p/config.txt")).unwrap();
    assert!(echo.lines().any(|l| l == "run.seed = 77"), "{echo}");
}
