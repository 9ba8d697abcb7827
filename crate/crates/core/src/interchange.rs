//! Plain-text dataset interchange.
//!
//! A dataset is a CSV file with header `label,f_0,...,f_{K-1},xi_0,...,xi_{p-1}`
//! and a sibling manifest `<basename>.manifest.json` recording the declared
//! shape. Unlabeled (out-of-distribution) rows carry label `-1`.
//!
//! Doubles are written in Rust's shortest round-trip representation, so
//! `load(save(ds)) == ds` holds bit for bit.
//!
//! Every seeded operation here draws from ChaCha8 (a counter-based generator)
//! seeded with `seed_from_u64(seed)`, one stream per class index.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label carried by rows with no known class.
pub const UNLABELED: i64 = -1;

/// One classifier observation: label, score vector `f(x)` and features `xi(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub label: i64,
    pub scores: Vec<f64>,
    pub features: Vec<f64>,
}

impl Sample {
    pub fn new(label: i64, scores: Vec<f64>, features: Vec<f64>) -> Self {
        Self {
            label,
            scores,
            features,
        }
    }

    /// `argmax_l f_l`, ties resolved to the lowest index.
    pub fn predicted_class(&self) -> usize {
        argmax(&self.scores)
    }

    pub fn class(&self) -> Option<usize> {
        usize::try_from(self.label).ok()
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    num_classes: usize,
    dim: usize,
    rows: Vec<Sample>,
}

impl Dataset {
    /// Validates shape, label range and finiteness of every row.
    pub fn new(num_classes: usize, dim: usize, rows: Vec<Sample>) -> Result<Self> {
        if num_classes == 0 || dim == 0 {
            return Err(Error::InvalidDataset(format!(
                "K and p must be at least 1 (got K={num_classes}, p={dim})"
            )));
        }
        if rows.is_empty() {
            return Err(Error::InvalidDataset("dataset has no rows".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            check_row(row, num_classes, dim)
                .map_err(|msg| Error::InvalidDataset(format!("row {}: {msg}", i + 1)))?;
        }
        Ok(Self {
            num_classes,
            dim,
            rows,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Sample] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<Sample> {
        self.rows
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for row in &self.rows {
            if let Some(k) = row.class() {
                counts[k] += 1;
            }
        }
        counts
    }

    pub fn n_unlabeled(&self) -> usize {
        self.rows.iter().filter(|r| r.label == UNLABELED).count()
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            num_classes: self.num_classes,
            dim: self.dim,
            n: self.len(),
            class_counts: self.class_counts(),
            n_unlabeled: self.n_unlabeled(),
        }
    }
}

fn check_row(row: &Sample, k: usize, p: usize) -> std::result::Result<(), String> {
    if row.scores.len() != k {
        return Err(format!("expected {k} scores, found {}", row.scores.len()));
    }
    if row.features.len() != p {
        return Err(format!(
            "expected {p} features, found {}",
            row.features.len()
        ));
    }
    if row.label != UNLABELED && !(0..k as i64).contains(&row.label) {
        return Err(format!("label {} outside [0, {k}) and not -1", row.label));
    }
    if row
        .scores
        .iter()
        .chain(row.features.iter())
        .any(|v| !v.is_finite())
    {
        return Err("non-finite value".into());
    }
    Ok(())
}

/// Sidecar describing a dataset file's declared shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(rename = "K")]
    pub num_classes: usize,
    #[serde(rename = "p")]
    pub dim: usize,
    pub n: usize,
    pub class_counts: Vec<usize>,
    #[serde(default)]
    pub n_unlabeled: usize,
}

/// `data/ind.csv` -> `data/ind.manifest.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("manifest.json")
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mpath = manifest_path(path);
    let mtext = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&mtext)
        .map_err(|e| Error::Manifest(format!("{}: {e}", mpath.display())))?;

    let parse_err = |row: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        msg,
    };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| parse_err(0, e.to_string()))?;

    let header = reader
        .headers()
        .map_err(|e| parse_err(0, e.to_string()))?
        .clone();
    let (k, p) = parse_header(header.iter()).map_err(|msg| parse_err(0, msg))?;

    let width = 1 + k + p;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| parse_err(row, e.to_string()))?;
        if record.len() != width {
            return Err(parse_err(
                row,
                format!("expected {width} fields, found {}", record.len()),
            ));
        }
        let label: i64 = record[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(row, format!("bad label {:?}", &record[0])))?;
        let mut values = Vec::with_capacity(k + p);
        for (j, field) in record.iter().enumerate().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(row, format!("column {j}: bad number {field:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(row, format!("column {j}: non-finite value")));
            }
            values.push(v);
        }
        let features = values.split_off(k);
        let sample = Sample::new(label, values, features);
        check_row(&sample, k, p).map_err(|msg| parse_err(row, msg))?;
        rows.push(sample);
    }

    let ds = Dataset::new(k, p, rows).map_err(|e| match e {
        Error::InvalidDataset(msg) => parse_err(0, msg),
        other => other,
    })?;

    let found = ds.manifest();
    if found != manifest {
        return Err(Error::Manifest(format!(
            "{} declares K={} p={} n={} class_counts={:?} n_unlabeled={}, \
             file holds K={} p={} n={} class_counts={:?} n_unlabeled={}",
            mpath.display(),
            manifest.num_classes,
            manifest.dim,
            manifest.n,
            manifest.class_counts,
            manifest.n_unlabeled,
            found.num_classes,
            found.dim,
            found.n,
            found.class_counts,
            found.n_unlabeled,
        )));
    }
    Ok(ds)
}

fn parse_header<'a>(
    fields: impl Iterator<Item = &'a str>,
) -> std::result::Result<(usize, usize), String> {
    let fields: Vec<&str> = fields.map(str::trim).collect();
    if fields.first() != Some(&"label") {
        return Err("header must start with `label`".into());
    }
    let k = fields[1..]
        .iter()
        .take_while(|f| f.starts_with("f_"))
        .count();
    let p = fields.len() - 1 - k;
    for (i, name) in fields[1..1 + k].iter().enumerate() {
        if *name != format!("f_{i}") {
            return Err(format!("expected `f_{i}`, found `{name}`"));
        }
    }
    for (j, name) in fields[1 + k..].iter().enumerate() {
        if *name != format!("xi_{j}") {
            return Err(format!("expected `xi_{j}`, found `{name}`"));
        }
    }
    if k == 0 || p == 0 {
        return Err(format!("header declares K={k}, p={p}; both must be >= 1"));
    }
    Ok((k, p))
}

/// Writes the CSV and its manifest.
pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("label");
    for i in 0..ds.num_classes {
        write!(text, ",f_{i}").unwrap();
    }
    for j in 0..ds.dim {
        write!(text, ",xi_{j}").unwrap();
    }
    text.push('\n');
    for row in &ds.rows {
        write!(text, "{}", row.label).unwrap();
        for v in row.scores.iter().chain(row.features.iter()) {
            // Debug formatting of f64 is the shortest string that parses back
            // to the same bits.
            write!(text, ",{v:?}").unwrap();
        }
        text.push('\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(text.as_bytes())
        .map_err(|e| Error::io(path, e))?;

    let mpath = manifest_path(path);
    let mut mtext = serde_json::to_string(&ds.manifest())?;
    mtext.push('\n');
    fs::write(&mpath, mtext).map_err(|e| Error::io(&mpath, e))?;
    Ok(())
}

/// Per-class partition into GP-fitting and validation subsets.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPair {
    /// `gp[k]` holds the class-k rows used to fit the GP.
    pub gp: Vec<Vec<Sample>>,
    /// `valid[k]` holds the class-k rows used for threshold calibration.
    pub valid: Vec<Vec<Sample>>,
}

/// `m_gp = max(2, floor(gp_fraction * n_k))`.
pub fn gp_split_size(n_k: usize, gp_fraction: f64) -> usize {
    ((gp_fraction * n_k as f64).floor() as usize).max(2)
}

pub fn class_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seeded per-class shuffle-and-cut. Unlabeled rows are ignored.
pub fn split_per_class(ds: &Dataset, gp_fraction: f64, seed: u64) -> Result<SplitPair> {
    if !(gp_fraction > 0.0 && gp_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "gp_fraction must lie in (0, 1), got {gp_fraction}"
        )));
    }
    let k = ds.num_classes;
    let mut by_class: Vec<Vec<&Sample>> = vec![Vec::new(); k];
    for row in &ds.rows {
        if let Some(c) = row.class() {
            by_class[c].push(row);
        }
    }

    let mut gp = Vec::with_capacity(k);
    let mut valid = Vec::with_capacity(k);
    for (class, mut members) in by_class.into_iter().enumerate() {
        let n_k = members.len();
        if n_k < 3 {
            return Err(Error::InsufficientClass {
                class,
                count: n_k,
                required: 3,
            });
        }
        members.shuffle(&mut class_rng(seed, class as u64));
        let m_gp = gp_split_size(n_k, gp_fraction).min(n_k - 1);
        let valid_part = members.split_off(m_gp);
        gp.push(members.into_iter().cloned().collect());
        valid.push(valid_part.into_iter().cloned().collect());
    }
    Ok(SplitPair { gp, valid })
}

/// Parameters of the synthetic Gaussian-cluster generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub dim: usize,
    pub n_per_class: usize,
    pub n_ood: usize,
    pub cluster_separation: f64,
    pub ood_offset: f64,
    pub score_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 3,
            dim: 8,
            n_per_class: 200,
            n_ood: 200,
            cluster_separation: 8.0,
            ood_offset: 20.0,
            score_scale: 10.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.num_classes == 0 || self.dim == 0 || self.n_per_class == 0 || self.n_ood == 0 {
            return bad("K, p, n_per_class and n_ood must all be at least 1");
        }
        if !(self.cluster_separation > 0.0 && self.cluster_separation.is_finite()) {
            return bad("cluster_separation must be positive and finite");
        }
        if !(self.ood_offset >= 0.0 && self.ood_offset.is_finite()) {
            return bad("ood_offset must be non-negative and finite");
        }
        if !self.score_scale.is_finite() {
            return bad("score_scale must be finite");
        }
        Ok(())
    }

    /// Class centers on an integer lattice with spacing `cluster_separation`,
    /// so every pair is at least that far apart.
    pub fn centers(&self) -> Vec<Vec<f64>> {
        let mut side = 1usize;
        while (side as f64).powi(self.dim.min(64) as i32) < self.num_classes as f64 {
            side += 1;
        }
        (0..self.num_classes)
            .map(|mut idx| {
                let mut c = vec![0.0; self.dim];
                for coord in c.iter_mut() {
                    *coord = (idx % side) as f64 * self.cluster_separation;
                    idx /= side;
                }
                c
            })
            .collect()
    }

    /// Center of the OOD cluster: `ood_offset` beyond the InD center farthest
    /// from the centroid, along the centroid-to-center direction.
    pub fn ood_center(&self) -> Vec<f64> {
        let centers = self.centers();
        let p = self.dim;
        let centroid: Vec<f64> = (0..p)
            .map(|j| centers.iter().map(|c| c[j]).sum::<f64>() / centers.len() as f64)
            .collect();
        let dist = |c: &[f64]| sq_dist(c, &centroid).sqrt();
        let mut far = 0;
        for (i, c) in centers.iter().enumerate() {
            if dist(c) > dist(&centers[far]) {
                far = i;
            }
        }
        let r = dist(&centers[far]);
        let dir: Vec<f64> = if r > 0.0 {
            centers[far]
                .iter()
                .zip(&centroid)
                .map(|(a, b)| (a - b) / r)
                .collect()
        } else {
            let mut e = vec![0.0; p];
            e[0] = 1.0;
            e
        };
        centers[far]
            .iter()
            .zip(&dir)
            .map(|(c, d)| c + self.ood_offset * d)
            .collect()
    }

    /// `f_l(xi) = score_scale - |xi - c_l|^2` for every class `l`.
    pub fn scores_at(&self, centers: &[Vec<f64>], features: &[f64]) -> Vec<f64> {
        centers
            .iter()
            .map(|c| self.score_scale - sq_dist(features, c))
            .collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn gaussian_around(center: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    center
        .iter()
        .map(|c| {
            let noise: f64 = StandardNormal.sample(rng);
            c + noise
        })
        .collect()
}

/// Draws unit-variance Gaussian clusters for each class and one OOD cluster.
pub fn synthesize(cfg: &SynthConfig) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let centers = cfg.centers();
    let mut ind_rows = Vec::with_capacity(cfg.num_classes * cfg.n_per_class);
    for (k, center) in centers.iter().enumerate() {
        let mut rng = class_rng(cfg.seed, k as u64);
        for _ in 0..cfg.n_per_class {
            let features = gaussian_around(center, &mut rng);
            let scores = cfg.scores_at(&centers, &features);
            ind_rows.push(Sample::new(k as i64, scores, features));
        }
    }

    let ood_center = cfg.ood_center();
    let mut rng = class_rng(cfg.seed, cfg.num_classes as u64);
    let ood_rows = (0..cfg.n_ood)
        .map(|_| {
            let features = gaussian_around(&ood_center, &mut rng);
            let scores = cfg.scores_at(&centers, &features);
            Sample::new(UNLABELED, scores, features)
        })
        .collect();

    Ok((
        Dataset::new(cfg.num_classes, cfg.dim, ind_rows)?,
        Dataset::new(cfg.num_classes, cfg.dim, ood_rows)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> Dataset {
        Dataset::new(
            2,
            4,
            vec![
                Sample::new(0, vec![1.5, -0.25], vec![0.1, 0.2, 0.3, 0.4]),
                Sample::new(1, vec![-3.0, 7.0], vec![1e-300, -2.0, 5.5, 0.0]),
                Sample::new(UNLABELED, vec![0.0, 0.1], vec![1.0, 1.0, 1.0, 1.0]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn load_echoes_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        save_dataset(&small(), &path).unwrap();
        let ds = load_dataset(&path).unwrap();
        assert_eq!((ds.len(), ds.num_classes(), ds.dim()), (3, 2, 4));
        assert_eq!(ds, small());
        let manifest = fs::read_to_string(dir.path().join("d.manifest.json")).unwrap();
        assert_eq!(
            manifest.trim(),
            r#"{"K":2,"p":4,"n":3,"class_counts":[1,1],"n_unlabeled":1}"#
        );
    }

    #[test]
    fn non_numeric_token_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        save_dataset(&small(), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[2] = lines[2].replacen("-3.0", "abc", 1);
        fs::write(&path, lines.join("\n")).unwrap();
        match load_dataset(&path) {
            Err(Error::Parse { row, msg, .. }) => {
                assert_eq!(row, 2);
                assert!(msg.contains("abc"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_ragged_rows_and_nan() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        save_dataset(&small(), &path).unwrap();
        let good = fs::read_to_string(&path).unwrap();

        fs::write(&path, good.replacen(",0.4\n", "\n", 1)).unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(Error::Parse { row: 1, .. })
        ));

        fs::write(&path, good.replacen("7.0", "NaN", 1)).unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(Error::Parse { row: 2, .. })
        ));
    }

    #[test]
    fn rejects_manifest_mismatch_and_bad_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        save_dataset(&small(), &path).unwrap();
        fs::write(
            manifest_path(&path),
            r#"{"K":2,"p":4,"n":4,"class_counts":[2,1],"n_unlabeled":1}"#,
        )
        .unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Manifest(_))));

        save_dataset(&small(), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replacen("xi_1", "xi_7", 1)).unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(Error::Parse { row: 0, .. })
        ));
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(Dataset::new(2, 3, vec![]).is_err());
    }

    #[test]
    fn single_class_file_is_legal() {
        let ds = Dataset::new(1, 2, vec![Sample::new(0, vec![3.0], vec![1.0, 2.0])]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.csv");
        save_dataset(&ds, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), ds);
    }

    #[test]
    fn label_out_of_range_rejected() {
        let row = Sample::new(2, vec![0.0, 0.0], vec![0.0]);
        assert!(Dataset::new(2, 1, vec![row]).is_err());
    }

    fn labeled(counts: &[usize]) -> Dataset {
        let mut rows = Vec::new();
        for (k, &n) in counts.iter().enumerate() {
            for i in 0..n {
                let mut scores = vec![0.0; counts.len()];
                scores[k] = i as f64;
                rows.push(Sample::new(k as i64, scores, vec![i as f64, k as f64]));
            }
        }
        Dataset::new(counts.len(), 2, rows).unwrap()
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        let split = split_per_class(&labeled(&[10, 10]), 0.8, 1).unwrap();
        for k in 0..2 {
            assert_eq!(split.gp[k].len(), 8);
            assert_eq!(split.valid[k].len(), 2);
        }
        let split = split_per_class(&labeled(&[3]), 0.5, 1).unwrap();
        assert_eq!((split.gp[0].len(), split.valid[0].len()), (2, 1));
    }

    #[test]
    fn split_is_deterministic() {
        let ds = labeled(&[17, 9, 30]);
        assert_eq!(
            split_per_class(&ds, 0.8, 42).unwrap(),
            split_per_class(&ds, 0.8, 42).unwrap()
        );
        assert_ne!(
            split_per_class(&ds, 0.8, 42).unwrap(),
            split_per_class(&ds, 0.8, 43).unwrap()
        );
    }

    #[test]
    fn split_rejects_small_class() {
        match split_per_class(&labeled(&[5, 2]), 0.8, 0) {
            Err(Error::InsufficientClass {
                class: 1, count: 2, ..
            }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn synth_is_reproducible_and_shaped() {
        let cfg = SynthConfig {
            num_classes: 2,
            dim: 2,
            n_per_class: 50,
            n_ood: 50,
            seed: 9,
            ..SynthConfig::default()
        };
        let a = synthesize(&cfg).unwrap();
        let b = synthesize(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.class_counts(), vec![50, 50]);
        assert_eq!(a.1.n_unlabeled(), 50);
    }

    #[test]
    fn synth_true_class_scores_near_scale() {
        let cfg = SynthConfig {
            num_classes: 4,
            dim: 3,
            n_per_class: 400,
            score_scale: 10.0,
            seed: 3,
            ..SynthConfig::default()
        };
        let (ind, _) = synthesize(&cfg).unwrap();
        for k in 0..4 {
            let own: Vec<f64> = ind
                .rows()
                .iter()
                .filter(|r| r.label == k as i64)
                .map(|r| r.scores[k])
                .collect();
            let mean = own.iter().sum::<f64>() / own.len() as f64;
            // E|xi - c|^2 = p for unit-variance noise.
            assert!((mean - (10.0 - 3.0)).abs() < 0.5, "class {k}: {mean}");
            assert!(ind
                .rows()
                .iter()
                .filter(|r| r.label == k as i64)
                .all(|r| r.predicted_class() == k));
        }
    }

    #[test]
    fn centers_respect_separation() {
        let cfg = SynthConfig {
            num_classes: 7,
            dim: 2,
            cluster_separation: 5.0,
            ..SynthConfig::default()
        };
        let c = cfg.centers();
        for i in 0..c.len() {
            for j in 0..i {
                assert!(sq_dist(&c[i], &c[j]).sqrt() >= 5.0 - 1e-12);
            }
        }
    }

    #[test]
    fn zero_offset_ood_sits_on_farthest_center() {
        let cfg = SynthConfig {
            ood_offset: 0.0,
            ..SynthConfig::default()
        };
        let oc = cfg.ood_center();
        assert!(cfg.centers().iter().any(|c| sq_dist(c, &oc) == 0.0));
    }

    #[test]
    fn argmax_ties_to_lowest_index() {
        assert_eq!(argmax(&[5.0, 5.0]), 0);
        assert_eq!(argmax(&[1.0, 5.0, 5.0]), 1);
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        (1usize..4, 1usize..4, 1usize..6).prop_flat_map(|(k, p, n)| {
            let row = (
                -1i64..k as i64,
                prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, k),
                prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL, p),
            )
                .prop_map(|(l, s, f)| Sample::new(l, s, f));
            prop::collection::vec(row, n).prop_map(move |rows| Dataset::new(k, p, rows).unwrap())
        })
    }

    proptest! {
        #[test]
        fn save_load_round_trip(ds in arb_dataset()) {
            let dir = tempfile::tempdir().unwrap();
            let a = dir.path().join("a.csv");
            let b = dir.path().join("b.csv");
            save_dataset(&ds, &a).unwrap();
            let back = load_dataset(&a).unwrap();
            prop_assert_eq!(&back, &ds);
            save_dataset(&back, &b).unwrap();
            prop_assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        }

        #[test]
        fn split_partitions_each_class(
            counts in prop::collection::vec(3usize..25, 1..4),
            frac in 0.05f64..0.95,
            seed in any::<u64>(),
        ) {
            let ds = labeled(&counts);
            let split = split_per_class(&ds, frac, seed).unwrap();
            for (k, &n) in counts.iter().enumerate() {
                let m_gp = gp_split_size(n, frac);
                prop_assert_eq!(split.gp[k].len(), m_gp);
                prop_assert_eq!(split.valid[k].len(), n - m_gp);
                prop_assert!(!split.valid[k].is_empty());
                // Rows are unique per class (first feature is the in-class index).
                let mut seen: Vec<usize> = split.gp[k].iter().chain(&split.valid[k])
                    .map(|r| r.features[0] as usize).collect();
                seen.sort_unstable();
                prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
            }
        }
    }
}
