use gpood_core::bound::BoundChecker;
use gpood_core::detector::{self, DetectionResult, DetectorConfig, DetectorModel};
use gpood_core::gp::PredictiveDistribution;
use gpood_core::hyperfit::OptimizerConfig;
use gpood_core::interchange::{self, Sample, SynthConfig};
use gpood_core::metrics::{self, EvalReport, Truth};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: gpood_core::Error) -> PyErr {
    match e {
        gpood_core::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Labeled feature/score table. Unlabeled (OOD) rows carry label -1.
#[pyclass(module = "gpood", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Dataset {
    inner: interchange::Dataset,
}

#[pymethods]
impl Dataset {
    #[new]
    fn new(
        num_classes: usize,
        dim: usize,
        labels: Vec<i64>,
        scores: Vec<Vec<f64>>,
        features: Vec<Vec<f64>>,
    ) -> PyResult<Self> {
        if labels.len() != scores.len() || labels.len() != features.len() {
            return Err(PyValueError::new_err(
                "labels, scores and features must have the same length",
            ));
        }
        let rows = labels
            .into_iter()
            .zip(scores)
            .zip(features)
            .map(|((l, s), f)| Sample::new(l, s, f))
            .collect();
        let inner = interchange::Dataset::new(num_classes, dim, rows).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = interchange::load_dataset(path).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        interchange::save_dataset(&self.inner, path).map_err(to_py)
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn labels(&self) -> Vec<i64> {
        self.inner.rows().iter().map(|s| s.label).collect()
    }

    #[getter]
    fn scores(&self) -> Vec<Vec<f64>> {
        self.inner.rows().iter().map(|s| s.scores.clone()).collect()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        self.inner
            .rows()
            .iter()
            .map(|s| s.features.clone())
            .collect()
    }

    fn class_counts(&self) -> Vec<usize> {
        self.inner.class_counts()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(K={}, p={}, n={})",
            self.inner.num_classes(),
            self.inner.dim(),
            self.inner.len()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (num_classes, dim, n_per_class, n_ood=None, cluster_separation=8.0, ood_offset=20.0, score_scale=10.0, seed=0))]
#[allow(clippy::too_many_arguments)]
fn synthesize(
    num_classes: usize,
    dim: usize,
    n_per_class: usize,
    n_ood: Option<usize>,
    cluster_separation: f64,
    ood_offset: f64,
    score_scale: f64,
    seed: u64,
) -> PyResult<(Dataset, Dataset)> {
    let cfg = SynthConfig {
        num_classes,
        dim,
        n_per_class,
        n_ood: n_ood.unwrap_or(n_per_class),
        cluster_separation,
        ood_offset,
        score_scale,
        seed,
    };
    let (ind, ood) = interchange::synthesize(&cfg).map_err(to_py)?;
    Ok((Dataset { inner: ind }, Dataset { inner: ood }))
}

#[pyclass(module = "gpood", frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
struct Detection {
    predicted_class: usize,
    score: f64,
    threshold: f64,
    margin: f64,
    is_ood: bool,
    mu: f64,
    var: f64,
}

impl From<DetectionResult> for Detection {
    fn from(r: DetectionResult) -> Self {
        Self {
            predicted_class: r.predicted_class,
            score: r.score,
            threshold: r.threshold,
            margin: r.margin,
            is_ood: r.is_ood,
            mu: r.pred.mu,
            var: r.pred.var,
        }
    }
}

#[pymethods]
impl Detection {
    fn __repr__(&self) -> String {
        format!(
            "Detection(class={}, score={:e}, threshold={:e}, is_ood={})",
            self.predicted_class,
            self.score,
            self.threshold,
            if self.is_ood { "True" } else { "False" }
        )
    }
}

#[pyclass(module = "gpood", frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
struct BoundReport {
    class_k: usize,
    a_k: f64,
    lambda_min: f64,
    rhs: f64,
    d_min_sq: f64,
    implied_ood: bool,
    detector_ood: bool,
    score: f64,
    gamma: f64,
}

/// Fitted per-class GP detector.
#[pyclass(module = "gpood", frozen)]
struct Detector {
    inner: DetectorModel,
}

#[pymethods]
impl Detector {
    #[staticmethod]
    #[pyo3(signature = (dataset, alpha=0.05, gp_fraction=0.8, seed=0, max_gp_points=Some(1000), n_restarts=3, max_iters=200, leave_one_out=false))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        py: Python<'_>,
        dataset: &Dataset,
        alpha: f64,
        gp_fraction: f64,
        seed: u64,
        max_gp_points: Option<usize>,
        n_restarts: usize,
        max_iters: usize,
        leave_one_out: bool,
    ) -> PyResult<Self> {
        let cfg = DetectorConfig {
            alpha,
            gp_fraction,
            split_seed: seed,
            optimizer: OptimizerConfig {
                n_restarts,
                max_iters,
                seed,
                ..OptimizerConfig::default()
            },
            max_gp_points,
            leave_one_out,
        };
        let inner = py
            .detach(|| detector::fit_detector(&dataset.inner, &cfg))
            .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = DetectorModel::load(path).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = DetectorModel::from_json(text).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn gammas(&self) -> Vec<f64> {
        self.inner.gammas()
    }

    #[getter]
    fn lengthscales(&self) -> Vec<Vec<f64>> {
        self.inner
            .classes()
            .iter()
            .map(|c| c.gp.lengthscales().as_slice().to_vec())
            .collect()
    }

    #[getter]
    fn tau2(&self) -> Vec<f64> {
        self.inner.classes().iter().map(|c| c.gp.tau2()).collect()
    }

    /// Class-`k` detection score at `features`.
    fn score(&self, k: usize, features: Vec<f64>) -> PyResult<f64> {
        let class = self
            .inner
            .classes()
            .get(k)
            .ok_or_else(|| PyValueError::new_err(format!("no class {k}")))?;
        class.score(&features).map_err(to_py)
    }

    fn detect(&self, scores: Vec<f64>, features: Vec<f64>) -> PyResult<Detection> {
        let r = self
            .inner
            .detect(&Sample::new(-1, scores, features))
            .map_err(to_py)?;
        Ok(r.into())
    }

    fn detect_all(&self, dataset: &Dataset) -> PyResult<Vec<Detection>> {
        let rs = self.inner.detect_all(&dataset.inner).map_err(to_py)?;
        Ok(rs.into_iter().map(Detection::from).collect())
    }

    fn bound_check(&self, dataset: &Dataset) -> PyResult<Vec<BoundReport>> {
        let checker = BoundChecker::new(&self.inner).map_err(to_py)?;
        dataset
            .inner
            .rows()
            .iter()
            .map(|s| {
                let r = checker.check(s).map_err(to_py)?;
                Ok(BoundReport {
                    class_k: r.class_k,
                    a_k: r.a_k,
                    lambda_min: r.lambda_min,
                    rhs: r.rhs,
                    d_min_sq: r.d_min_sq,
                    implied_ood: r.implied_ood,
                    detector_ood: r.detector_ood,
                    score: r.score,
                    gamma: r.gamma,
                })
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Detector(K={}, p={}, alpha={})",
            self.inner.num_classes(),
            self.inner.dim(),
            self.inner.alpha()
        )
    }
}

#[pyclass(module = "gpood", frozen)]
struct Evaluation {
    inner: EvalReport,
}

#[pymethods]
impl Evaluation {
    #[getter]
    fn tpr(&self) -> f64 {
        self.inner.tpr
    }

    #[getter]
    fn tnr(&self) -> f64 {
        self.inner.tnr
    }

    #[getter]
    fn auroc(&self) -> f64 {
        self.inner.auroc
    }

    #[getter]
    fn n_ind(&self) -> usize {
        self.inner.n_ind
    }

    #[getter]
    fn n_ood(&self) -> usize {
        self.inner.n_ood
    }

    /// `(margin, is_ood_truth, is_ood_verdict)` per sample, InD rows first.
    fn per_sample(&self) -> Vec<(f64, bool, bool)> {
        self.inner
            .per_sample
            .iter()
            .map(|s| (s.margin, s.truth == Truth::Ood, s.is_ood))
            .collect()
    }

    /// `(fpr, tpr)` points with OOD as the positive class.
    fn roc_curve(&self) -> Vec<(f64, f64)> {
        metrics::roc_curve(&self.inner)
            .into_iter()
            .map(|p| (p.fpr, p.tpr))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Evaluation(tpr={:.4}, tnr={:.4}, auroc={:.4})",
            self.inner.tpr, self.inner.tnr, self.inner.auroc
        )
    }
}

#[pyfunction]
fn evaluate(detector: &Detector, ind: &Dataset, ood: &Dataset) -> PyResult<Evaluation> {
    let inner = metrics::evaluate(&detector.inner, &ind.inner, &ood.inner).map_err(to_py)?;
    Ok(Evaluation { inner })
}

#[pyfunction]
fn kl_score_pair(mu: f64, var: f64, mu_ref: f64, var_ref: f64) -> PyResult<f64> {
    detector::kl_score_pair(
        PredictiveDistribution { mu, var },
        PredictiveDistribution {
            mu: mu_ref,
            var: var_ref,
        },
    )
    .map_err(to_py)
}

#[pyfunction]
fn auroc(ind_margins: Vec<f64>, ood_margins: Vec<f64>) -> PyResult<f64> {
    metrics::auroc(&ind_margins, &ood_margins).map_err(to_py)
}

#[pyfunction]
fn order_statistic_threshold(scores: Vec<f64>, alpha: f64) -> PyResult<f64> {
    detector::order_statistic_threshold(&scores, alpha).map_err(to_py)
}

#[pymodule]
fn gpood(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Detector>()?;
    m.add_class::<Detection>()?;
    m.add_class::<BoundReport>()?;
    m.add_class::<Evaluation>()?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(kl_score_pair, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(order_statistic_threshold, m)?)?;
    Ok(())
}
