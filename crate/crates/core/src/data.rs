//! Datasets on disk: a `manifest.csv` (`path,label,group_id`) next to
//! binary PGM/PPM rasters, plus the synthetic two-class generator.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::augment::bilinear_resize;
use crate::error::{Error, Result};
use crate::fewshot::LabeledSample;
use crate::image::ImageTensor;
use crate::rng::{purpose, Philox};

pub const MANIFEST: &str = "manifest.csv";

/// One manifest row. `label` is `None` for unlabeled images (`-1`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub path: String,
    pub label: Option<usize>,
    pub group_id: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub records: Vec<ManifestRecord>,
    pub images: Vec<ImageTensor>,
}

impl Dataset {
    /// Labeled samples in manifest order; unlabeled rows are skipped.
    pub fn labeled(&self) -> Vec<LabeledSample> {
        self.records
            .iter()
            .zip(&self.images)
            .filter_map(|(r, img)| {
                r.label.map(|label| LabeledSample {
                    image: img.clone(),
                    label,
                    group_id: r.group_id.clone(),
                })
            })
            .collect()
    }
}

/// Decodes a binary PGM (P5) or PPM (P6) with maxval 255.
pub fn decode_pnm(bytes: &[u8]) -> std::result::Result<ImageTensor, String> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err("not a binary PGM/PPM (expected P5 or P6)".into()),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("malformed header field")?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(format!("maxval {maxval} unsupported (only 255)"));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("missing whitespace after header".into());
    }
    pos += 1;
    let n = channels * width * height;
    let raster = bytes.get(pos..).filter(|r| r.len() == n).ok_or_else(|| {
        format!("expected {n} raster bytes, found {}", bytes.len().saturating_sub(pos))
    })?;
    // Interleaved samples to planar channels.
    let mut pixels = vec![0f32; n];
    for (i, &b) in raster.iter().enumerate() {
        let (p, c) = (i / channels, i % channels);
        pixels[c * width * height + p] = f32::from(b) / 255.0;
    }
    ImageTensor::new(channels, height, width, pixels).map_err(|e| e.to_string())
}

/// Encodes with the canonical header `P5\n{w} {h}\n255\n` (P6 for RGB).
pub fn encode_pnm(img: &ImageTensor) -> Vec<u8> {
    let (c, h, w) = (img.channels(), img.height(), img.width());
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let px = img.pixels();
    for p in 0..h * w {
        for ch in 0..c {
            out.push(quantize(px[ch * h * w + p]));
        }
    }
    out
}

fn quantize(x: f32) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn read_pnm(path: &Path) -> Result<ImageTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes).map_err(|m| Error::format(path, m))
}

pub fn write_pnm(img: &ImageTensor, path: &Path) -> Result<()> {
    fs::write(path, encode_pnm(img)).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(root: &Path) -> Result<Vec<ManifestRecord>> {
    let path = root.join(MANIFEST);
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(&path)
        .map_err(|e| Error::format(&path, e.to_string()))?;
    let header = reader.headers().map_err(|e| Error::format(&path, e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != ["path", "label", "group_id"] {
        return Err(Error::format(&path, "header must be `path,label,group_id`"));
    }
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::format(&path, e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        let bad = |msg: String| Error::format(&path, format!("line {line}: {msg}"));
        if row.len() != 3 {
            return Err(bad(format!("expected 3 fields, found {}", row.len())));
        }
        let label = match row[1].parse::<i64>() {
            Ok(-1) => None,
            Ok(l) if l >= 0 => Some(l as usize),
            _ => return Err(bad(format!("label `{}` is not a non-negative integer or -1", &row[1]))),
        };
        let rel = &row[0];
        if rel.is_empty() || Path::new(rel).is_absolute() || rel.split(['/', '\\']).any(|c| c == "..") {
            return Err(bad(format!("path `{rel}` must be relative to the dataset root")));
        }
        if row[2].is_empty() {
            return Err(bad("empty group_id".into()));
        }
        if !seen.insert(rel.to_string()) {
            return Err(bad(format!("duplicate path `{rel}`")));
        }
        records.push(ManifestRecord {
            path: rel.to_string(),
            label,
            group_id: row[2].to_string(),
        });
    }
    Ok(records)
}

pub fn write_manifest(root: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut out = String::from("path,label,group_id\n");
    for r in records {
        let label = r.label.map_or("-1".to_string(), |l| l.to_string());
        out.push_str(&format!("{},{},{}\n", r.path, label, r.group_id));
    }
    let path = root.join(MANIFEST);
    fs::write(&path, out).map_err(|e| Error::io(path, e))
}

/// Reads the manifest and every raster, resizing each to `size`×`size`.
pub fn load_dataset(root: &Path, size: usize) -> Result<Dataset> {
    let records = read_manifest(root)?;
    let images = records
        .iter()
        .map(|r| {
            let img = read_pnm(&root.join(&r.path))?;
            if img.height() == size && img.width() == size {
                Ok(img)
            } else {
                bilinear_resize(&img, size, size)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { records, images })
}

pub fn save_dataset(root: &Path, data: &Dataset) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for (r, img) in data.records.iter().zip(&data.images) {
        write_pnm(img, &root.join(&r.path))?;
    }
    write_manifest(root, &data.records)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_per_class: usize,
    pub classes: usize,
    pub image_size: usize,
    pub groups_per_class: usize,
    /// Maximum per-image center offset as a fraction of the image size.
    pub center_jitter: f64,
    /// Range of the per-image peak intensity.
    pub amplitude: (f64, f64),
    /// Relative spread of blob width and ring radius, in `[0, 1]`.
    pub shape_spread: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_per_class: 100,
            classes: 2,
            image_size: 32,
            groups_per_class: 10,
            center_jitter: 0.15,
            amplitude: (0.3, 1.0),
            shape_spread: 0.3,
        }
    }
}

pub const SYNTH_NOISE: f64 = 0.05;

/// Class 0 is a Gaussian blob, class 1 a ring. Each group shares a base
/// center offset and every image adds its own jitter, amplitude, shape
/// parameter and pixel noise. Pixels are quantized to 8 bits so the
/// in-memory set equals what [`save_dataset`] writes.
pub fn synth_dataset(cfg: &SynthConfig, seed: u64) -> Result<Dataset> {
    if cfg.classes != 2 {
        return Err(Error::Config(format!("synthetic data supports 2 classes, got {}", cfg.classes)));
    }
    if cfg.image_size < 8 {
        return Err(Error::Config(format!("synthetic image size must be at least 8, got {}", cfg.image_size)));
    }
    let (a0, a1) = cfg.amplitude;
    if !(0.0 <= a0 && a0 <= a1 && a1 <= 1.0) {
        return Err(Error::Config(format!("synthetic amplitude range must satisfy 0 <= min <= max <= 1, got ({a0}, {a1})")));
    }
    if !(0.0..=0.5).contains(&cfg.center_jitter) {
        return Err(Error::Config(format!("synthetic center jitter must lie in [0, 0.5], got {}", cfg.center_jitter)));
    }
    if !(0.0..=1.0).contains(&cfg.shape_spread) {
        return Err(Error::Config(format!("synthetic shape spread must lie in [0, 1], got {}", cfg.shape_spread)));
    }
    if cfg.groups_per_class == 0 || cfg.n_per_class < cfg.groups_per_class {
        return Err(Error::Config(format!(
            "need 1 <= groups per class <= images per class, got {} and {}",
            cfg.groups_per_class, cfg.n_per_class
        )));
    }
    let s = cfg.image_size as f64;
    let mut records = Vec::new();
    let mut images = Vec::new();
    for class in 0..cfg.classes {
        for i in 0..cfg.n_per_class {
            let group = class * cfg.groups_per_class + i * cfg.groups_per_class / cfg.n_per_class;
            let mut g_rng = Philox::for_tags(seed, &[purpose::SYNTH, 0, group as u64]);
            let (gx, gy) = (g_rng.uniform(-0.05, 0.05) * s, g_rng.uniform(-0.05, 0.05) * s);
            let idx = class * cfg.n_per_class + i;
            let mut rng = Philox::for_tags(seed, &[purpose::SYNTH, 1, idx as u64]);
            let j = cfg.center_jitter;
            let cx = (s - 1.0) / 2.0 + gx + rng.uniform(-j, j) * s;
            let cy = (s - 1.0) / 2.0 + gy + rng.uniform(-j, j) * s;
            let amp = rng.uniform(cfg.amplitude.0, cfg.amplitude.1);
            let shape = cfg.shape_spread * rng.uniform(-0.5, 0.5);
            let pixels = (0..cfg.image_size * cfg.image_size)
                .map(|p| {
                    let (y, x) = ((p / cfg.image_size) as f64, (p % cfg.image_size) as f64);
                    let r = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
                    let v = if class == 0 {
                        let sigma = s * (0.15 + 0.06 * shape);
                        amp * (-(r * r) / (2.0 * sigma * sigma)).exp()
                    } else {
                        let radius = s * (0.29 + 0.08 * shape);
                        let width = s / 16.0;
                        amp * (-((r - radius) * (r - radius)) / (2.0 * width * width)).exp()
                    };
                    let v = (v + SYNTH_NOISE * rng.normal()) as f32;
                    f32::from(quantize(v)) / 255.0
                })
                .collect();
            images.push(ImageTensor::new(1, cfg.image_size, cfg.image_size, pixels)?);
            records.push(ManifestRecord {
                path: format!("img_{idx:05}.pgm"),
                label: Some(class),
                group_id: format!("subject_{group:03}"),
            });
        }
    }
    Ok(Dataset { records, images })
}

/// Resolves `path` against `base` unless it is already absolute.
pub fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn pgm_round_trip_is_byte_exact() {
        let mut rng = Philox::new(1);
        let px: Vec<f32> = (0..12).map(|_| rng.below(256) as f32 / 255.0).collect();
        let img = ImageTensor::new(1, 3, 4, px).unwrap();
        let bytes = encode_pnm(&img);
        assert!(bytes.starts_with(b"P5\n4 3\n255\n"));
        let back = decode_pnm(&bytes).unwrap();
        assert_eq!(back, img);
        assert_eq!(encode_pnm(&back), bytes);
    }

    #[test]
    fn ppm_is_interleaved() {
        let bytes = b"P6\n2 1\n255\n\x00\x80\xff\xff\x00\x00".to_vec();
        let img = decode_pnm(&bytes).unwrap();
        assert_eq!(img.channels(), 3);
        assert_eq!(img.get(0, 0, 1), 1.0);
        assert_eq!(img.get(2, 0, 0), 1.0);
        assert_eq!(encode_pnm(&img), bytes);
    }

    #[test]
    fn header_comments_and_errors() {
        let img = decode_pnm(b"P5 # c\n2 # w\n1\n255\n\xff\xff").unwrap();
        assert_eq!(img.pixels(), &[1.0, 1.0]);
        assert!(decode_pnm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pnm(b"P5\n2 2\n255\n\x00").is_err());
        assert!(decode_pnm(b"P5\n1 1\n65535\n\x00\x00").is_err());
    }

    #[test]
    fn block_groups() {
        let d = synth_dataset(&SynthConfig::default(), 3).unwrap();
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &d.records {
            *counts.entry(&r.group_id).or_default() += 1;
        }
        assert_eq!(counts.len(), 20);
        assert!(counts.values().all(|&c| c == 10));
        assert_eq!(d, synth_dataset(&SynthConfig::default(), 3).unwrap());
    }

    #[test]
    fn rejects_unsupported_synth_configs() {
        for cfg in [
            SynthConfig { classes: 3, ..SynthConfig::default() },
            SynthConfig { image_size: 4, ..SynthConfig::default() },
            SynthConfig { groups_per_class: 0, ..SynthConfig::default() },
        ] {
            assert!(synth_dataset(&cfg, 0).is_err());
        }
    }

    #[test]
    fn two_row_manifest_loads() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.pgm"), b"P5\n4 4\n255\n".iter().copied().chain([255u8; 16]).collect::<Vec<_>>()).unwrap();
        fs::write(dir.path().join("b.pgm"), b"P5\n4 4\n255\n".iter().copied().chain([0u8; 16]).collect::<Vec<_>>()).unwrap();
        fs::write(dir.path().join(MANIFEST), "path,label,group_id\na.pgm,1,p1\nb.pgm,-1,p2\n").unwrap();
        let d = load_dataset(dir.path(), 4).unwrap();
        assert_eq!(d.records[0].label, Some(1));
        assert_eq!(d.records[1].label, None);
        assert_eq!(d.records[1].group_id, "p2");
        assert!(d.images[0].pixels().iter().all(|&p| p == 1.0));
        assert_eq!(d.labeled().len(), 1);
    }

    #[test]
    fn load_errors_name_the_problem() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_dataset(dir.path(), 4).unwrap_err().to_string();
        assert!(err.contains(MANIFEST), "{err}");

        fs::write(dir.path().join(MANIFEST), "path,label,group_id\nmissing.pgm,0,p\n").unwrap();
        let err = load_dataset(dir.path(), 4).unwrap_err().to_string();
        assert!(err.contains("missing.pgm"), "{err}");

        fs::write(dir.path().join(MANIFEST), "path,label,group_id\nx.pgm,0,p\nx.pgm,1,q\n").unwrap();
        let err = read_manifest(dir.path()).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("duplicate"), "{err}");

        fs::write(dir.path().join(MANIFEST), "path,label,group_id\nx.pgm,zero,p\n").unwrap();
        let err = read_manifest(dir.path()).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");

        fs::write(dir.path().join(MANIFEST), "path,label,group_id\n../x.pgm,0,p\n").unwrap();
        assert!(read_manifest(dir.path()).is_err());
    }

    #[test]
    fn saved_synthetic_sets_are_byte_identical() {
        let cfg = SynthConfig { n_per_class: 6, groups_per_class: 2, image_size: 12, ..SynthConfig::default() };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        save_dataset(a.path(), &synth_dataset(&cfg, 11).unwrap()).unwrap();
        save_dataset(b.path(), &synth_dataset(&cfg, 11).unwrap()).unwrap();
        let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert_eq!(names.len(), 13);
        for n in names {
            assert_eq!(fs::read(a.path().join(&n)).unwrap(), fs::read(b.path().join(&n)).unwrap());
        }
        let back = load_dataset(a.path(), 12).unwrap();
        assert_eq!(back, synth_dataset(&cfg, 11).unwrap());
    }

    #[test]
    fn classes_are_linearly_separable() {
        // least-squares probe on 8x8 block means plus a bias column
        let d = synth_dataset(&SynthConfig::default(), 42).unwrap();
        let feats = 65;
        let n = d.images.len();
        let mut x = nalgebra::DMatrix::<f64>::zeros(n, feats);
        let mut y = nalgebra::DVector::<f64>::zeros(n);
        for (r, (img, rec)) in d.images.iter().zip(&d.records).enumerate() {
            for (p, &v) in img.pixels().iter().enumerate() {
                let (row, col) = (p / 32, p % 32);
                x[(r, (row / 4) * 8 + col / 4)] += f64::from(v) / 16.0;
            }
            x[(r, 64)] = 1.0;
            y[r] = if rec.label == Some(1) { 1.0 } else { -1.0 };
        }
        let w = x.clone().svd(true, true).solve(&y, 1e-10).unwrap();
        let pred = &x * w;
        let correct = (0..n).filter(|&i| (pred[i] > 0.0) == (y[i] > 0.0)).count();
        assert!(correct as f64 / n as f64 > 0.95, "{correct}/{n}");
    }
}
