//! The detector: per-class GPs, validation-calibrated thresholds, and the
//! InD/OOD decision rule `score > gamma_k`.

use std::fs;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{self, ClassGP, PredictiveDistribution};
use crate::hyperfit::{self, OptimizerConfig};
use crate::interchange::{self, class_rng, Dataset, Sample};
use crate::kernel::Lengthscales;

pub const FORMAT_VERSION: u32 = 1;

/// Stream offset separating subsampling draws from split shuffles.
const SUBSAMPLE_STREAM: u64 = 1 << 32;

/// Divergence between two predictive normals:
///
/// `log(v_ref / v') + (v' + (mu' - mu_ref)^2) / (2 v_ref) - 1/2`
///
/// The log term carries no factor 1/2, so this differs from the textbook
/// Gaussian KL. It is zero for identical arguments and non-negative whenever
/// `v' <= v_ref`, but dips below zero for `1 < v' / v_ref < 3.51` at equal means.
pub fn kl_score_pair(pprime: PredictiveDistribution, pref: PredictiveDistribution) -> Result<f64> {
    let ok = |d: PredictiveDistribution| d.mu.is_finite() && d.var.is_finite() && d.var > 0.0;
    if !ok(pprime) || !ok(pref) {
        return Err(Error::InvalidDataset(format!(
            "KL score needs finite means and positive variances, got {pprime:?} and {pref:?}"
        )));
    }
    Ok(kl_unchecked(pprime, pref))
}

#[inline]
fn kl_unchecked(pprime: PredictiveDistribution, pref: PredictiveDistribution) -> f64 {
    let dmu = pprime.mu - pref.mu;
    (pref.var / pprime.var).ln() + (pprime.var + dmu * dmu) / (2.0 * pref.var) - 0.5
}

/// A validation point with its cached GP prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationPoint {
    pub features: Vec<f64>,
    pub pred: PredictiveDistribution,
}

fn mean_score(pred: PredictiveDistribution, valid: &[ValidationPoint]) -> Result<f64> {
    if valid.is_empty() {
        return Err(Error::InvalidDataset("empty validation set".into()));
    }
    let mut sum = 0.0;
    for v in valid {
        sum += kl_score_pair(pred, v.pred)?;
    }
    Ok(sum / valid.len() as f64)
}

/// `s_k(q)`: mean divergence from the prediction at `q` to every cached
/// validation prediction of the class.
pub fn detection_score(gp: &ClassGP, valid: &[ValidationPoint], q: &[f64]) -> Result<f64> {
    mean_score(gp.predict(q)?, valid)
}

/// Order statistic `s_(i)` with `i = ceil((1 - alpha) m)`, 1-based and clamped
/// to `[1, m]`.
pub fn order_statistic_threshold(scores: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if scores.is_empty() {
        return Err(Error::InvalidDataset("no calibration scores".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    // The small slack keeps e.g. (1 - 0.1) * 10 from rounding up to 10.
    let raw = (1.0 - alpha) * m as f64;
    let idx = (raw - 1e-9 * raw.max(1.0)).ceil() as usize;
    Ok(sorted[idx.clamp(1, m) - 1])
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )))
    }
}

/// Detection score of every validation point against its own class set.
/// Leave-self-in includes the point's own zero term; leave-one-out drops it.
pub fn calibration_scores(valid: &[ValidationPoint], leave_one_out: bool) -> Result<Vec<f64>> {
    if valid.is_empty() {
        return Err(Error::InvalidDataset("empty validation set".into()));
    }
    if leave_one_out && valid.len() < 2 {
        return Err(Error::InvalidDataset(
            "leave-one-out calibration needs at least 2 validation points".into(),
        ));
    }
    valid
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if leave_one_out {
                let mut sum = 0.0;
                for (j, w) in valid.iter().enumerate() {
                    if j != i {
                        sum += kl_score_pair(v.pred, w.pred)?;
                    }
                }
                Ok(sum / (valid.len() - 1) as f64)
            } else {
                mean_score(v.pred, valid)
            }
        })
        .collect()
}

/// One `gamma_k` per class.
pub fn calibrate_thresholds(
    valid_sets: &[Vec<ValidationPoint>],
    alpha: f64,
    leave_one_out: bool,
) -> Result<Vec<f64>> {
    valid_sets
        .iter()
        .enumerate()
        .map(|(k, valid)| {
            calibration_scores(valid, leave_one_out)
                .and_then(|s| order_statistic_threshold(&s, alpha))
                .map_err(|e| Error::ClassFit {
                    class: k,
                    source: Box::new(e),
                })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub alpha: f64,
    pub gp_fraction: f64,
    pub split_seed: u64,
    pub optimizer: OptimizerConfig,
    /// Cap on GP training points per class; `None` disables subsampling.
    pub max_gp_points: Option<usize>,
    pub leave_one_out: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            gp_fraction: 0.8,
            split_seed: 0,
            optimizer: OptimizerConfig::default(),
            max_gp_points: Some(1000),
            leave_one_out: false,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if !(self.gp_fraction > 0.0 && self.gp_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "gp_fraction must lie in (0, 1), got {}",
                self.gp_fraction
            )));
        }
        if self.max_gp_points.is_some_and(|m| m < 2) {
            return Err(Error::InvalidConfig(
                "max_gp_points must be at least 2".into(),
            ));
        }
        self.optimizer.validate()
    }
}

/// Optimizer outcome kept for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub final_ll: f64,
    pub initial_ll: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Everything the detector keeps for one class.
#[derive(Debug, Clone)]
pub struct ClassModel {
    pub gp: ClassGP,
    pub valid: Vec<ValidationPoint>,
    pub gamma: f64,
    pub fit: FitSummary,
}

impl ClassModel {
    pub fn score(&self, q: &[f64]) -> Result<f64> {
        detection_score(&self.gp, &self.valid, q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub predicted_class: usize,
    pub score: f64,
    pub threshold: f64,
    pub is_ood: bool,
    pub margin: f64,
    /// GP prediction at the sample under its predicted class.
    pub pred: PredictiveDistribution,
}

#[derive(Debug, Clone)]
pub struct DetectorModel {
    num_classes: usize,
    dim: usize,
    config: DetectorConfig,
    classes: Vec<ClassModel>,
}

/// Runs the full pipeline: split, subsample, fit lengthscales and GP per
/// class, cache validation predictions, calibrate thresholds.
pub fn fit_detector(ind: &Dataset, cfg: &DetectorConfig) -> Result<DetectorModel> {
    cfg.validate()?;
    let split = interchange::split_per_class(ind, cfg.gp_fraction, cfg.split_seed)?;
    let mut classes = Vec::with_capacity(ind.num_classes());
    for (k, (gp_rows, valid_rows)) in split.gp.iter().zip(&split.valid).enumerate() {
        let class = fit_class(k, gp_rows, valid_rows, cfg).map_err(|e| Error::ClassFit {
            class: k,
            source: Box::new(e),
        })?;
        classes.push(class);
    }
    Ok(DetectorModel {
        num_classes: ind.num_classes(),
        dim: ind.dim(),
        config: *cfg,
        classes,
    })
}

fn fit_class(
    k: usize,
    gp_rows: &[Sample],
    valid_rows: &[Sample],
    cfg: &DetectorConfig,
) -> Result<ClassModel> {
    let chosen: Vec<&Sample> = match cfg.max_gp_points {
        Some(cap) if gp_rows.len() > cap => {
            let mut rng = class_rng(cfg.split_seed, SUBSAMPLE_STREAM + k as u64);
            let mut idx = index::sample(&mut rng, gp_rows.len(), cap).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| &gp_rows[i]).collect()
        }
        _ => gp_rows.iter().collect(),
    };
    let x_gp: Vec<Vec<f64>> = chosen.iter().map(|s| s.features.clone()).collect();
    let z: Vec<f64> = chosen.iter().map(|s| s.scores[k]).collect();

    let hf = hyperfit::optimize_lengthscales(&x_gp, &z, &cfg.optimizer)?;
    let gp = gp::fit_gp(k, x_gp, z, hf.lengthscales)?;
    let valid: Vec<ValidationPoint> = valid_rows
        .iter()
        .map(|s| ValidationPoint {
            features: s.features.clone(),
            pred: gp.predict_unchecked(&s.features),
        })
        .collect();
    let gamma =
        order_statistic_threshold(&calibration_scores(&valid, cfg.leave_one_out)?, cfg.alpha)?;
    Ok(ClassModel {
        gp,
        valid,
        gamma,
        fit: FitSummary {
            final_ll: hf.final_ll,
            initial_ll: hf.diagnostics.initial_ll,
            iterations: hf.diagnostics.iterations,
            converged: hf.diagnostics.converged,
        },
    })
}

impl DetectorModel {
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn alpha(&self) -> f64 {
        self.config.alpha
    }

    pub fn classes(&self) -> &[ClassModel] {
        &self.classes
    }

    pub fn class(&self, k: usize) -> &ClassModel {
        &self.classes[k]
    }

    pub fn gammas(&self) -> Vec<f64> {
        self.classes.iter().map(|c| c.gamma).collect()
    }

    /// Replaces `gamma_k`; used to study threshold sensitivity.
    pub fn with_gamma(mut self, k: usize, gamma: f64) -> Self {
        self.classes[k].gamma = gamma;
        self
    }

    pub fn check_sample(&self, sample: &Sample) -> Result<()> {
        if sample.scores.len() != self.num_classes {
            return Err(Error::DimensionMismatch {
                expected: self.num_classes,
                found: sample.scores.len(),
            });
        }
        if sample.features.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: sample.features.len(),
            });
        }
        Ok(())
    }

    pub fn detect(&self, sample: &Sample) -> Result<DetectionResult> {
        self.check_sample(sample)?;
        let k = sample.predicted_class();
        let class = &self.classes[k];
        let pred = class.gp.predict_unchecked(&sample.features);
        let score = mean_score(pred, &class.valid)?;
        Ok(DetectionResult {
            predicted_class: k,
            score,
            threshold: class.gamma,
            is_ood: score > class.gamma,
            margin: score - class.gamma,
            pred,
        })
    }

    pub fn detect_all(&self, ds: &Dataset) -> Result<Vec<DetectionResult>> {
        ds.rows().iter().map(|s| self.detect(s)).collect()
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            format_version: FORMAT_VERSION,
            num_classes: self.num_classes,
            dim: self.dim,
            config: self.config,
            classes: self
                .classes
                .iter()
                .map(|c| ClassRecord {
                    class: c.gp.class(),
                    lengthscales: c.gp.lengthscales().as_slice().to_vec(),
                    tau2: c.gp.tau2(),
                    jitter_applied: c.gp.jitter_applied(),
                    gamma: c.gamma,
                    fit: c.fit,
                    x_gp: c.gp.x_gp().to_vec(),
                    z: c.gp.z().to_vec(),
                    valid: c.valid.clone(),
                })
                .collect(),
        }
    }

    pub fn from_file(file: ModelFile) -> Result<Self> {
        if file.format_version != FORMAT_VERSION {
            return Err(Error::Model(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                file.format_version
            )));
        }
        if file.classes.len() != file.num_classes {
            return Err(Error::Model(format!(
                "K={} but {} class records",
                file.num_classes,
                file.classes.len()
            )));
        }
        let mut classes = Vec::with_capacity(file.num_classes);
        for (k, rec) in file.classes.into_iter().enumerate() {
            if rec.class != k {
                return Err(Error::Model(format!(
                    "class record {k} labeled {}",
                    rec.class
                )));
            }
            if rec.lengthscales.len() != file.dim
                || rec.valid.iter().any(|v| v.features.len() != file.dim)
            {
                return Err(Error::Model(format!(
                    "class {k}: feature width differs from p"
                )));
            }
            if rec.valid.is_empty() || !rec.gamma.is_finite() {
                return Err(Error::Model(format!("class {k}: missing calibration")));
            }
            let gp = ClassGP::restore(
                k,
                rec.x_gp,
                rec.z,
                Lengthscales::new(rec.lengthscales)?,
                rec.tau2,
                rec.jitter_applied,
            )?;
            classes.push(ClassModel {
                gp,
                valid: rec.valid,
                gamma: rec.gamma,
                fit: rec.fit,
            });
        }
        Ok(Self {
            num_classes: file.num_classes,
            dim: file.dim,
            config: file.config,
            classes,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&self.to_file())?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// On-disk model layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    #[serde(rename = "K")]
    pub num_classes: usize,
    #[serde(rename = "p")]
    pub dim: usize,
    pub config: DetectorConfig,
    pub classes: Vec<ClassRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRecord {
    pub class: usize,
    pub lengthscales: Vec<f64>,
    pub tau2: f64,
    pub jitter_applied: f64,
    pub gamma: f64,
    pub fit: FitSummary,
    pub x_gp: Vec<Vec<f64>>,
    pub z: Vec<f64>,
    pub valid: Vec<ValidationPoint>,
}
