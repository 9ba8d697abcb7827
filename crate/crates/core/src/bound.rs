//! Distance bound guaranteeing detection: a query whose squared weighted
//! distance to every in-distribution point of its predicted class exceeds
//! `-1/2 log(2 a_k lambda_min / m_GP)` should score above `gamma_k`.

use nalgebra::SymmetricEigen;

use crate::detector::{ClassModel, DetectorModel};
use crate::error::{Error, Result};
use crate::gp::ClassGP;
use crate::interchange::Sample;
use crate::kernel::weighted_sq_dist;

/// `a_k = gamma_k - mean_valid log(sigma^2(x) / tau^2)`, each ratio clamped to
/// `[1e-300, 1]`.
pub fn compute_a_k(class: &ClassModel) -> f64 {
    let tau2 = class.gp.tau2();
    let n = class.valid.len() as f64;
    let mean_log = class
        .valid
        .iter()
        .map(|v| (v.pred.var / tau2).clamp(1e-300, 1.0).ln())
        .sum::<f64>()
        / n;
    class.gamma - mean_log
}

/// Smallest eigenvalue of the jittered kernel matrix.
pub fn min_eigenvalue(gp: &ClassGP) -> Result<f64> {
    let eig = SymmetricEigen::try_new(gp.kernel().matrix().clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::Model("symmetric eigen-decomposition did not converge".into()))?;
    Ok(eig.eigenvalues.min())
}

/// `-1/2 log(2 a lambda / m)`; `-inf` once the argument reaches 1 and `+inf`
/// when `a <= 0`, where the bound says nothing.
pub fn bound_rhs(a_k: f64, lambda_min: f64, m_gp: usize) -> f64 {
    let arg = 2.0 * a_k * lambda_min / m_gp as f64;
    if arg.is_nan() || arg <= 0.0 {
        f64::INFINITY
    } else if arg >= 1.0 {
        f64::NEG_INFINITY
    } else {
        -0.5 * arg.ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    pub class_k: usize,
    pub a_k: f64,
    pub lambda_min: f64,
    pub rhs: f64,
    pub d_min_sq: f64,
    /// The bound fires: `d_min_sq > rhs` and `d_min_sq > 0`.
    pub implied_ood: bool,
    pub detector_ood: bool,
    pub score: f64,
    pub gamma: f64,
}

impl BoundReport {
    /// Bound fires but the detector keeps the sample, beyond `tol` in score.
    pub fn is_violation(&self, tol: f64) -> bool {
        self.implied_ood && self.score <= self.gamma - tol
    }
}

/// Per-class quantities frozen once so many probes can be checked cheaply.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassBound {
    pub a_k: f64,
    pub lambda_min: f64,
    pub m_gp: usize,
    pub rhs: f64,
}

impl ClassBound {
    pub fn new(class: &ClassModel) -> Result<Self> {
        let a_k = compute_a_k(class);
        let lambda_min = min_eigenvalue(&class.gp)?;
        let m_gp = class.gp.m();
        Ok(Self {
            a_k,
            lambda_min,
            m_gp,
            rhs: bound_rhs(a_k, lambda_min, m_gp),
        })
    }
}

pub struct BoundChecker<'a> {
    model: &'a DetectorModel,
    classes: Vec<ClassBound>,
}

impl<'a> BoundChecker<'a> {
    pub fn new(model: &'a DetectorModel) -> Result<Self> {
        let classes = model
            .classes()
            .iter()
            .map(ClassBound::new)
            .collect::<Result<_>>()?;
        Ok(Self { model, classes })
    }

    pub fn class_bounds(&self) -> &[ClassBound] {
        &self.classes
    }

    pub fn check(&self, sample: &Sample) -> Result<BoundReport> {
        let det = self.model.detect(sample)?;
        let k = det.predicted_class;
        let class = self.model.class(k);
        let theta = class.gp.lengthscales().as_slice();
        let d_min_sq = class
            .gp
            .x_gp()
            .iter()
            .chain(class.valid.iter().map(|v| &v.features))
            .map(|x| weighted_sq_dist(&sample.features, x, theta))
            .fold(f64::INFINITY, f64::min);
        let b = self.classes[k];
        Ok(BoundReport {
            class_k: k,
            a_k: b.a_k,
            lambda_min: b.lambda_min,
            rhs: b.rhs,
            d_min_sq,
            implied_ood: d_min_sq > b.rhs && d_min_sq > 0.0,
            detector_ood: det.is_ood,
            score: det.score,
            gamma: det.threshold,
        })
    }
}

/// One-off check; prefer [`BoundChecker`] for many samples.
pub fn theorem_check(model: &DetectorModel, sample: &Sample) -> Result<BoundReport> {
    BoundChecker::new(model)?.check(sample)
}
