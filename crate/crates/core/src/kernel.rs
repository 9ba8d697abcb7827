//! Squared-exponential ARD kernel `k(a, b) = exp(-sum_j (a_j - b_j)^2 / theta_j)`.
//!
//! `theta_j` divides the *squared* coordinate difference, so the matching
//! distance is `d(a, b) = sqrt(sum_j (a_j - b_j)^2 / theta_j)` and
//! `k(a, b) = exp(-d(a, b)^2)` holds exactly.

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-dimension lengthscales, all strictly positive and finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Lengthscales(Vec<f64>);

impl Lengthscales {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::InvalidConfig(
                "lengthscales must be non-empty".into(),
            ));
        }
        if let Some(bad) = theta.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "lengthscale {bad} is not strictly positive and finite"
            )));
        }
        Ok(Self(theta))
    }

    pub fn from_log(log_theta: &[f64]) -> Result<Self> {
        Self::new(log_theta.iter().map(|u| u.exp()).collect())
    }

    pub fn log(&self) -> Vec<f64> {
        self.0.iter().map(|t| t.ln()).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl TryFrom<Vec<f64>> for Lengthscales {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Lengthscales> for Vec<f64> {
    fn from(ls: Lengthscales) -> Self {
        ls.0
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

fn check_points(points: &[Vec<f64>], ls: &Lengthscales) -> Result<()> {
    points.iter().try_for_each(|x| check_dim(ls.dim(), x.len()))
}

#[inline]
pub(crate) fn weighted_sq_dist(a: &[f64], b: &[f64], theta: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(theta)
        .map(|((x, y), t)| (x - y) * (x - y) / t)
        .sum()
}

pub fn kernel_value(a: &[f64], b: &[f64], ls: &Lengthscales) -> Result<f64> {
    check_dim(ls.dim(), a.len())?;
    check_dim(ls.dim(), b.len())?;
    Ok((-weighted_sq_dist(a, b, ls.as_slice())).exp())
}

/// Diagonal nugget escalation applied until Cholesky succeeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterPolicy {
    pub initial: f64,
    pub factor: f64,
    pub max: f64,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        Self {
            initial: 1e-8,
            factor: 10.0,
            max: 1e-2,
        }
    }
}

impl JitterPolicy {
    /// Only the given value, no escalation.
    pub fn fixed(jitter: f64) -> Self {
        Self {
            initial: jitter,
            factor: 10.0,
            max: jitter,
        }
    }

    fn schedule(&self) -> impl Iterator<Item = f64> + '_ {
        let cap = self.max * (1.0 + 1e-9);
        std::iter::successors(Some(self.initial), move |&j| {
            let next = j * self.factor;
            (next > j).then_some(next)
        })
        .take_while(move |j| *j <= cap)
    }
}

/// Jittered kernel matrix together with its Cholesky factor.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    jitter_applied: f64,
}

impl KernelMatrix {
    /// The jittered matrix `Phi + jitter * I`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    pub fn jitter_applied(&self) -> f64 {
        self.jitter_applied
    }

    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    /// `log |Phi + jitter I| = 2 sum log L_ii`.
    pub fn log_det(&self) -> f64 {
        2.0 * self
            .chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d.ln())
            .sum::<f64>()
    }
}

fn gram(points: &[Vec<f64>], theta: &[f64]) -> DMatrix<f64> {
    let n = points.len();
    let mut m = DMatrix::<f64>::identity(n, n);
    for j in 0..n {
        for i in (j + 1)..n {
            let v = (-weighted_sq_dist(&points[i], &points[j], theta)).exp();
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

pub fn kernel_matrix(
    points: &[Vec<f64>],
    ls: &Lengthscales,
    policy: JitterPolicy,
) -> Result<KernelMatrix> {
    if points.is_empty() {
        return Err(Error::InvalidDataset(
            "kernel matrix needs at least one point".into(),
        ));
    }
    check_points(points, ls)?;
    let base = gram(points, ls.as_slice());
    let mut last = policy.initial;
    for jitter in policy.schedule() {
        last = jitter;
        let mut m = base.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(m.clone()) {
            return Ok(KernelMatrix {
                matrix: m,
                chol,
                jitter_applied: jitter,
            });
        }
    }
    let n = base.nrows();
    let max_offdiag = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|ij| base[ij])
        .fold(0.0, f64::max);
    Err(Error::NotPositiveDefinite {
        size: n,
        jitter: last,
        min_diag: base.diagonal().min() + last,
        max_offdiag,
    })
}

/// `|A| x |B|` matrix of kernel values, no jitter.
pub fn cross_kernel(a: &[Vec<f64>], b: &[Vec<f64>], ls: &Lengthscales) -> Result<DMatrix<f64>> {
    check_points(a, ls)?;
    check_points(b, ls)?;
    let theta = ls.as_slice();
    Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| {
        (-weighted_sq_dist(&a[i], &b[j], theta)).exp()
    }))
}

/// Kernel vector between one query and a point set.
pub(crate) fn cross_vector(q: &[f64], points: &[Vec<f64>], theta: &[f64]) -> Vec<f64> {
    points
        .iter()
        .map(|x| (-weighted_sq_dist(q, x, theta)).exp())
        .collect()
}

/// `min_x sqrt(sum_j (x_j - q_j)^2 / theta_j)` over a non-empty point set.
pub fn weighted_min_distance(q: &[f64], points: &[Vec<f64>], ls: &Lengthscales) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::InvalidDataset("empty point set".into()));
    }
    check_dim(ls.dim(), q.len())?;
    check_points(points, ls)?;
    let theta = ls.as_slice();
    Ok(points
        .iter()
        .map(|x| weighted_sq_dist(q, x, theta))
        .fold(f64::INFINITY, f64::min)
        .sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ls(v: &[f64]) -> Lengthscales {
        Lengthscales::new(v.to_vec()).unwrap()
    }

    #[test]
    fn kernel_value_examples() {
        assert_eq!(
            kernel_value(&[0.3, -1.0], &[0.3, -1.0], &ls(&[2.0, 5.0])).unwrap(),
            1.0
        );
        let theta = 3.0_f64;
        let diff = (theta * 2f64.ln()).sqrt();
        assert_relative_eq!(
            kernel_value(&[0.0], &[diff], &ls(&[theta])).unwrap(),
            0.5,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            kernel_value(&[0.0, 0.0], &[1.0, 1.0], &ls(&[1.0, 1.0])).unwrap(),
            0.1353352832366127,
            epsilon = 1e-15
        );
        assert!(kernel_value(&[0.0], &[1.0, 2.0], &ls(&[1.0])).is_err());
    }

    #[test]
    fn lengthscales_reject_nonpositive() {
        assert!(Lengthscales::new(vec![1.0, 0.0]).is_err());
        assert!(Lengthscales::new(vec![f64::NAN]).is_err());
        assert!(Lengthscales::new(vec![]).is_err());
    }

    #[test]
    fn single_point_matrix() {
        let km =
            kernel_matrix(&[vec![1.0, 2.0]], &ls(&[1.0, 1.0]), JitterPolicy::default()).unwrap();
        assert_eq!(km.matrix()[(0, 0)], 1.0 + 1e-8);
        assert_eq!(km.jitter_applied(), 1e-8);
    }

    #[test]
    fn duplicate_points_factor_with_jitter() {
        let x = vec![vec![0.5], vec![0.5]];
        let km = kernel_matrix(&x, &ls(&[1.0]), JitterPolicy::fixed(1e-8)).unwrap();
        let m = km.matrix();
        assert_eq!(m[(0, 0)], 1.0 + 1e-8);
        assert_eq!(m[(1, 1)], 1.0 + 1e-8);
        assert_eq!(m[(0, 1)], 1.0);
        assert_eq!(m[(1, 0)], 1.0);
    }

    #[test]
    fn jitter_escalates_and_reports_failure() {
        // Rank one and no jitter at all: Cholesky must fail.
        let x = vec![vec![0.0]; 4];
        let err = kernel_matrix(&x, &ls(&[1.0]), JitterPolicy::fixed(0.0)).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { size: 4, .. }));
        let km = kernel_matrix(&x, &ls(&[1.0]), JitterPolicy::default()).unwrap();
        assert!(km.jitter_applied() >= 1e-8 && km.jitter_applied() <= 1e-2);
    }

    #[test]
    fn schedule_reaches_cap() {
        let steps: Vec<f64> = JitterPolicy::default().schedule().collect();
        assert_eq!(steps.len(), 7);
        assert_relative_eq!(*steps.last().unwrap(), 1e-2, max_relative = 1e-12);
    }

    #[test]
    fn weighted_distance_examples() {
        assert_eq!(
            weighted_min_distance(&[2.0], &[vec![0.0]], &ls(&[4.0])).unwrap(),
            1.0
        );
        let pts = vec![vec![1.0, 2.0], vec![-1.0, 0.5]];
        assert_eq!(
            weighted_min_distance(&[-1.0, 0.5], &pts, &ls(&[0.3, 7.0])).unwrap(),
            0.0
        );
        assert!(weighted_min_distance(&[0.0, 0.0], &[], &ls(&[1.0, 1.0])).is_err());
    }

    fn point(p: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-3.0f64..3.0, p)
    }

    fn setup() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>)> {
        (1usize..5).prop_flat_map(|p| {
            (
                prop::collection::vec(point(p), 1..8),
                prop::collection::vec(point(p), 1..8),
                prop::collection::vec(0.05f64..20.0, p),
            )
        })
    }

    proptest! {
        #[test]
        fn assembly_matches_pointwise((x, _, theta) in setup()) {
            let l = ls(&theta);
            let km = kernel_matrix(&x, &l, JitterPolicy::default()).unwrap();
            let j = km.jitter_applied();
            for a in 0..x.len() {
                for b in 0..x.len() {
                    let mut expect = kernel_value(&x[a], &x[b], &l).unwrap();
                    if a == b { expect += j; }
                    prop_assert_eq!(km.matrix()[(a, b)], expect);
                }
            }
            let cross = cross_kernel(&x, &x, &l).unwrap();
            for a in 0..x.len() {
                prop_assert_eq!(cross[(a, a)] + j, km.matrix()[(a, a)]);
            }
        }

        #[test]
        fn cross_kernel_transpose((a, b, theta) in setup()) {
            let l = ls(&theta);
            let ab = cross_kernel(&a, &b, &l).unwrap();
            let ba = cross_kernel(&b, &a, &l).unwrap();
            prop_assert_eq!(ab, ba.transpose());
        }

        #[test]
        fn min_distance_matches_max_kernel((x, q, theta) in setup()) {
            let l = ls(&theta);
            let d = weighted_min_distance(&q[0], &x, &l).unwrap();
            let kmax = x.iter().map(|xi| kernel_value(&q[0], xi, &l).unwrap())
                .fold(0.0, f64::max);
            prop_assert!(((-d * d).exp() - kmax).abs() <= 1e-14);
        }

        #[test]
        fn kernel_bounded_and_monotone_in_theta(
            (x, q, theta) in setup(),
            j in 0usize..5,
            bump in 1.0f64..10.0,
        ) {
            let l = ls(&theta);
            let v = kernel_value(&x[0], &q[0], &l).unwrap();
            prop_assert!(v > 0.0 && v <= 1.0);
            if x[0] != q[0] { prop_assert!(v < 1.0 || weighted_sq_dist(&x[0], &q[0], &theta) < 1e-16); }
            let mut wider = theta.clone();
            let j = j % wider.len();
            wider[j] *= bump;
            prop_assert!(kernel_value(&x[0], &q[0], &ls(&wider)).unwrap() >= v);
        }

        #[test]
        fn jittered_matrix_eigenvalues_bounded((x, _, theta) in setup()) {
            let km = kernel_matrix(&x, &ls(&theta), JitterPolicy::default()).unwrap();
            let eig = km.matrix().clone().symmetric_eigenvalues();
            let n = x.len() as f64;
            prop_assert!(eig.min() >= km.jitter_applied() - n * f64::EPSILON);
        }
    }
}
