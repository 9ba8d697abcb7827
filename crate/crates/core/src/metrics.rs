//! TPR / TNR / AUROC over labeled InD and OOD test sets.
//!
//! Margins `s_k - gamma_k` pool the per-class scores onto one scale, with
//! OOD as the positive class of the ROC.

use serde::{Deserialize, Serialize};

use crate::detector::DetectorModel;
use crate::error::{Error, Result};
use crate::interchange::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Truth {
    Ind,
    Ood,
}

impl Truth {
    pub fn as_str(self) -> &'static str {
        match self {
            Truth::Ind => "ind",
            Truth::Ood => "ood",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub margin: f64,
    pub truth: Truth,
    /// Detector verdict.
    pub is_ood: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Fraction of InD samples kept as InD.
    pub tpr: f64,
    /// Fraction of OOD samples flagged.
    pub tnr: f64,
    pub auroc: f64,
    pub n_ind: usize,
    pub n_ood: usize,
    /// InD rows first, then OOD rows, each in input order.
    pub per_sample: Vec<SampleOutcome>,
}

fn check_shape(model: &DetectorModel, ds: &Dataset, what: &str) -> Result<()> {
    if ds.num_classes() != model.num_classes() {
        return Err(Error::InvalidDataset(format!(
            "{what} set has {} classes, model has {}",
            ds.num_classes(),
            model.num_classes()
        )));
    }
    if ds.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: ds.dim(),
        });
    }
    Ok(())
}

pub fn evaluate(
    model: &DetectorModel,
    ind_test: &Dataset,
    ood_test: &Dataset,
) -> Result<EvalReport> {
    check_shape(model, ind_test, "InD test")?;
    check_shape(model, ood_test, "OOD test")?;
    let mut per_sample = Vec::with_capacity(ind_test.len() + ood_test.len());
    for (ds, truth) in [(ind_test, Truth::Ind), (ood_test, Truth::Ood)] {
        for r in model.detect_all(ds)? {
            per_sample.push(SampleOutcome {
                margin: r.margin,
                truth,
                is_ood: r.is_ood,
            });
        }
    }
    report_from_outcomes(per_sample)
}

/// Builds a report from already-scored samples.
pub fn report_from_outcomes(per_sample: Vec<SampleOutcome>) -> Result<EvalReport> {
    let (ind, ood): (Vec<&SampleOutcome>, Vec<&SampleOutcome>) =
        per_sample.iter().partition(|s| s.truth == Truth::Ind);
    if ind.is_empty() || ood.is_empty() {
        return Err(Error::InvalidDataset(
            "evaluation needs at least one InD and one OOD sample".into(),
        ));
    }
    let flagged_ind = ind.iter().filter(|s| s.is_ood).count();
    let flagged_ood = ood.iter().filter(|s| s.is_ood).count();
    let ind_m: Vec<f64> = ind.iter().map(|s| s.margin).collect();
    let ood_m: Vec<f64> = ood.iter().map(|s| s.margin).collect();
    let auroc = auroc(&ind_m, &ood_m)?;
    let (n_ind, n_ood) = (ind.len(), ood.len());
    Ok(EvalReport {
        tpr: 1.0 - flagged_ind as f64 / n_ind as f64,
        tnr: flagged_ood as f64 / n_ood as f64,
        auroc,
        n_ind,
        n_ood,
        per_sample,
    })
}

/// Mann-Whitney AUROC with OOD as the positive class: the probability that a
/// random OOD margin exceeds a random InD margin, ties counting one half.
pub fn auroc(ind_margins: &[f64], ood_margins: &[f64]) -> Result<f64> {
    if ind_margins.is_empty() || ood_margins.is_empty() {
        return Err(Error::InvalidDataset("AUROC needs both classes".into()));
    }
    if ind_margins.iter().chain(ood_margins).any(|m| m.is_nan()) {
        return Err(Error::InvalidDataset("NaN margin".into()));
    }
    let mut all: Vec<(f64, bool)> = ind_margins
        .iter()
        .map(|&m| (m, false))
        .chain(ood_margins.iter().map(|&m| (m, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Midranks, 1-based; summed in half-units to stay exact.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let twice_mid = (i + 1 + j + 1) as u128;
        let pos = all[i..=j].iter().filter(|e| e.1).count() as u128;
        rank_sum2 += twice_mid * pos;
        i = j + 1;
    }
    let n1 = ood_margins.len() as u128;
    let n0 = ind_margins.len() as u128;
    let u2 = rank_sum2 - n1 * (n1 + 1);
    Ok(u2 as f64 / (2 * n0 * n1) as f64)
}

/// One ROC vertex; `tpr` here is the OOD detection rate and `fpr` the InD
/// false-alarm rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// Threshold sweep from `+inf` down through every distinct margin, flagging
/// `margin >= t`. Starts at (0,0) and ends at (1,1).
pub fn roc_curve(report: &EvalReport) -> Vec<RocPoint> {
    let mut m: Vec<(f64, Truth)> = report
        .per_sample
        .iter()
        .map(|s| (s.margin, s.truth))
        .collect();
    m.sort_by(|a, b| b.0.total_cmp(&a.0));
    let n_ind = m.iter().filter(|e| e.1 == Truth::Ind).count().max(1) as f64;
    let n_ood = m.iter().filter(|e| e.1 == Truth::Ood).count().max(1) as f64;

    let mut curve = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let (mut fp, mut tp) = (0usize, 0usize);
    let mut i = 0;
    while i < m.len() {
        let t = m[i].0;
        while i < m.len() && m[i].0 == t {
            match m[i].1 {
                Truth::Ind => fp += 1,
                Truth::Ood => tp += 1,
            }
            i += 1;
        }
        curve.push(RocPoint {
            fpr: fp as f64 / n_ind,
            tpr: tp as f64 / n_ood,
        });
    }
    curve
}

/// Trapezoidal area under a curve ordered by `fpr`.
pub fn trapezoid_area(curve: &[RocPoint]) -> f64 {
    curve
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * 0.5 * (w[0].tpr + w[1].tpr))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{fit_detector, DetectorConfig};
    use crate::hyperfit::OptimizerConfig;
    use crate::interchange::{synthesize, SynthConfig};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(ind: &[f64], ood: &[f64]) -> f64 {
        let mut s = 0.0;
        for &o in ood {
            for &i in ind {
                s += if o > i {
                    1.0
                } else if o == i {
                    0.5
                } else {
                    0.0
                };
            }
        }
        s / (ind.len() * ood.len()) as f64
    }

    fn outcomes(ind: &[f64], ood: &[f64]) -> Vec<SampleOutcome> {
        let mk = |m: f64, truth| SampleOutcome {
            margin: m,
            truth,
            is_ood: m > 0.0,
        };
        ind.iter()
            .map(|&m| mk(m, Truth::Ind))
            .chain(ood.iter().map(|&m| mk(m, Truth::Ood)))
            .collect()
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[-3.0, -2.0, -1.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(auroc(&[1.0, 2.0], &[-3.0]).unwrap(), 0.0);
        assert_eq!(auroc(&[0.7; 5], &[0.7; 4]).unwrap(), 0.5);
        assert!(auroc(&[], &[1.0]).is_err());
        assert!(auroc(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn auroc_matches_brute_force_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            // Coarse rounding forces many ties.
            let ind: Vec<f64> = (0..200)
                .map(|_| (rng.random::<f64>() * 20.0).round())
                .collect();
            let ood: Vec<f64> = (0..200)
                .map(|_| (rng.random::<f64>() * 20.0 + 3.0).round())
                .collect();
            assert_relative_eq!(
                auroc(&ind, &ood).unwrap(),
                brute_force(&ind, &ood),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn rates_count_verdicts() {
        let r = report_from_outcomes(outcomes(&[-1.0, 0.5, -0.2, -3.0], &[2.0, -0.1])).unwrap();
        assert_eq!((r.n_ind, r.n_ood), (4, 2));
        assert_eq!(r.tpr, 0.75);
        assert_eq!(r.tnr, 0.5);
        assert!(report_from_outcomes(outcomes(&[1.0], &[])).is_err());
    }

    #[test]
    fn roc_examples() {
        let r = report_from_outcomes(outcomes(&[-1.0], &[1.0])).unwrap();
        assert_eq!(
            roc_curve(&r),
            vec![
                RocPoint { fpr: 0.0, tpr: 0.0 },
                RocPoint { fpr: 0.0, tpr: 1.0 },
                RocPoint { fpr: 1.0, tpr: 1.0 },
            ]
        );
    }

    #[test]
    fn roc_area_matches_auroc_on_random_reports() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n0 = rng.random_range(1..60);
            let n1 = rng.random_range(1..60);
            let ind: Vec<f64> = (0..n0)
                .map(|_| (rng.random::<f64>() * 8.0).round())
                .collect();
            let ood: Vec<f64> = (0..n1)
                .map(|_| (rng.random::<f64>() * 8.0 + 1.0).round())
                .collect();
            let r = report_from_outcomes(outcomes(&ind, &ood)).unwrap();
            let c = roc_curve(&r);
            assert_eq!(c[0], RocPoint { fpr: 0.0, tpr: 0.0 });
            assert_eq!(*c.last().unwrap(), RocPoint { fpr: 1.0, tpr: 1.0 });
            assert_relative_eq!(trapezoid_area(&c), r.auroc, epsilon = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn auroc_invariant_under_increasing_maps(
            ind in prop::collection::vec(-5.0f64..5.0, 1..40),
            ood in prop::collection::vec(-5.0f64..5.0, 1..40),
        ) {
            let a = auroc(&ind, &ood).unwrap();
            let f = |v: &[f64]| v.iter().map(|x| x.powi(3) + (2.0 * x).exp()).collect::<Vec<_>>();
            prop_assert!((auroc(&f(&ind), &f(&ood)).unwrap() - a).abs() < 1e-12);
            let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
            prop_assert!((auroc(&neg(&ind), &neg(&ood)).unwrap() - (1.0 - a)).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluate_on_fitted_model() {
        let (ind, ood) = synthesize(&SynthConfig {
            num_classes: 2,
            dim: 2,
            n_per_class: 40,
            n_ood: 40,
            seed: 4,
            ..SynthConfig::default()
        })
        .unwrap();
        let cfg = DetectorConfig {
            optimizer: OptimizerConfig {
                n_restarts: 1,
                max_iters: 50,
                ..Default::default()
            },
            ..Default::default()
        };
        let model = fit_detector(&ind, &cfg).unwrap();
        let r = evaluate(&model, &ind, &ood).unwrap();
        assert_eq!((r.n_ind, r.n_ood), (80, 40));
        let flagged_ind = r.per_sample[..80].iter().filter(|s| s.is_ood).count();
        assert_eq!(r.tpr, 1.0 - flagged_ind as f64 / 80.0);
        for s in &r.per_sample {
            assert_eq!(s.is_ood, s.margin > 0.0);
        }
        assert!((0.0..=1.0).contains(&r.auroc));

        let wrong = Dataset::new(
            3,
            2,
            ood.rows()
                .iter()
                .map(|s| {
                    let mut s = s.clone();
                    s.scores.push(0.0);
                    s
                })
                .collect(),
        )
        .unwrap();
        assert!(evaluate(&model, &ind, &wrong).is_err());
    }
}
