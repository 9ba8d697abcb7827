//! Zero-mean, noise-free GP regression of one class score on features.
//!
//! The scale `tau2` is profiled out in closed form (`z^T Phi^-1 z / m`), which
//! leaves the lengthscales as the only hyperparameters. All solves go through
//! the one Cholesky factor held by [`ClassGP`].

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{self, JitterPolicy, KernelMatrix, Lengthscales};

/// Lower bound applied to `tau2`, so all-zero targets still give a usable fit.
pub const TAU2_FLOOR: f64 = 1e-12;
/// Predictive variances are clamped to `[VAR_FLOOR_REL * tau2, tau2]`.
pub const VAR_FLOOR_REL: f64 = 1e-12;

/// Gaussian posterior `N(mu, var)` at a single query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    pub mu: f64,
    pub var: f64,
}

/// A fitted GP for one class.
#[derive(Debug, Clone)]
pub struct ClassGP {
    class_k: usize,
    x_gp: Vec<Vec<f64>>,
    z: Vec<f64>,
    ls: Lengthscales,
    tau2: f64,
    kernel: KernelMatrix,
    solve_z: DVector<f64>,
}

fn check_inputs(x_gp: &[Vec<f64>], z: &[f64], ls: &Lengthscales) -> Result<()> {
    if x_gp.len() < 2 {
        return Err(Error::InvalidDataset(format!(
            "GP fit needs at least 2 points, got {}",
            x_gp.len()
        )));
    }
    if z.len() != x_gp.len() {
        return Err(Error::DimensionMismatch {
            expected: x_gp.len(),
            found: z.len(),
        });
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidDataset("non-finite GP target".into()));
    }
    if let Some(x) = x_gp.iter().find(|x| x.len() != ls.dim()) {
        return Err(Error::DimensionMismatch {
            expected: ls.dim(),
            found: x.len(),
        });
    }
    Ok(())
}

pub fn fit_gp(
    class_k: usize,
    x_gp: Vec<Vec<f64>>,
    z: Vec<f64>,
    ls: Lengthscales,
) -> Result<ClassGP> {
    fit_gp_with_policy(class_k, x_gp, z, ls, JitterPolicy::default())
}

pub fn fit_gp_with_policy(
    class_k: usize,
    x_gp: Vec<Vec<f64>>,
    z: Vec<f64>,
    ls: Lengthscales,
    policy: JitterPolicy,
) -> Result<ClassGP> {
    check_inputs(&x_gp, &z, &ls)?;
    let kernel = kernel::kernel_matrix(&x_gp, &ls, policy)?;
    let solve_z = kernel.cholesky().solve(&DVector::from_column_slice(&z));
    let m = z.len() as f64;
    let quad = z
        .iter()
        .zip(solve_z.iter())
        .map(|(a, b)| a * b)
        .sum::<f64>();
    let tau2 = (quad / m).max(TAU2_FLOOR);
    Ok(ClassGP {
        class_k,
        x_gp,
        z,
        ls,
        tau2,
        kernel,
        solve_z,
    })
}

impl ClassGP {
    /// Rebuilds a fit from persisted parameters: the factor is recomputed at
    /// exactly `jitter` and the stored `tau2` is kept as is.
    pub fn restore(
        class_k: usize,
        x_gp: Vec<Vec<f64>>,
        z: Vec<f64>,
        ls: Lengthscales,
        tau2: f64,
        jitter: f64,
    ) -> Result<Self> {
        if !(tau2.is_finite() && tau2 > 0.0) {
            return Err(Error::Model(format!(
                "class {class_k}: invalid tau2 {tau2}"
            )));
        }
        let mut gp = fit_gp_with_policy(class_k, x_gp, z, ls, JitterPolicy::fixed(jitter))?;
        gp.tau2 = tau2;
        Ok(gp)
    }

    pub fn class(&self) -> usize {
        self.class_k
    }

    pub fn x_gp(&self) -> &[Vec<f64>] {
        &self.x_gp
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn lengthscales(&self) -> &Lengthscales {
        &self.ls
    }

    pub fn tau2(&self) -> f64 {
        self.tau2
    }

    pub fn jitter_applied(&self) -> f64 {
        self.kernel.jitter_applied()
    }

    pub fn kernel(&self) -> &KernelMatrix {
        &self.kernel
    }

    /// `Phi^-1 z`.
    pub fn solve_z(&self) -> &DVector<f64> {
        &self.solve_z
    }

    pub fn m(&self) -> usize {
        self.z.len()
    }

    pub fn dim(&self) -> usize {
        self.ls.dim()
    }

    pub fn predict(&self, q: &[f64]) -> Result<PredictiveDistribution> {
        if q.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: q.len(),
            });
        }
        Ok(self.predict_unchecked(q))
    }

    pub(crate) fn predict_unchecked(&self, q: &[f64]) -> PredictiveDistribution {
        let k = DVector::from_vec(kernel::cross_vector(q, &self.x_gp, self.ls.as_slice()));
        let mu = k.dot(&self.solve_z);
        let v = self
            .kernel
            .cholesky()
            .l_dirty()
            .solve_lower_triangular(&k)
            .expect("Cholesky factor has a positive diagonal");
        let explained = v.norm_squared();
        let var = (self.tau2 * (1.0 - explained)).clamp(VAR_FLOOR_REL * self.tau2, self.tau2);
        PredictiveDistribution { mu, var }
    }
}

/// Profile log-likelihood `-(m/2) log(z^T Phi^-1 z) - (1/2) log|Phi|`, with the
/// additive constant dropped.
pub fn profile_log_likelihood(x_gp: &[Vec<f64>], z: &[f64], ls: &Lengthscales) -> Result<f64> {
    check_inputs(x_gp, z, ls)?;
    let km = kernel::kernel_matrix(x_gp, ls, JitterPolicy::default())?;
    let alpha = km.cholesky().solve(&DVector::from_column_slice(z));
    Ok(ll_from_parts(z, &alpha, &km))
}

fn quad_form(z: &[f64], alpha: &DVector<f64>) -> f64 {
    let m = z.len() as f64;
    let q = z.iter().zip(alpha.iter()).map(|(a, b)| a * b).sum::<f64>();
    q.max(m * TAU2_FLOOR)
}

fn ll_from_parts(z: &[f64], alpha: &DVector<f64>, km: &KernelMatrix) -> f64 {
    let m = z.len() as f64;
    -0.5 * m * quad_form(z, alpha).ln() - 0.5 * km.log_det()
}

/// Gradient of [`profile_log_likelihood`] with respect to `log theta_j`.
pub fn profile_ll_gradient(x_gp: &[Vec<f64>], z: &[f64], ls: &Lengthscales) -> Result<Vec<f64>> {
    profile_ll_and_gradient(x_gp, z, ls).map(|(_, g)| g)
}

/// Objective and its log-lengthscale gradient from a single factorization.
///
/// With `D_j = dPhi/dlog(theta_j) = Phi o S_j`, `S_j[a,b] = (x_aj - x_bj)^2 / theta_j`:
/// `grad_j = sum_ab [ m/(2q) alpha_a alpha_b - 1/2 (Phi^-1)_ab ] D_j[a,b]`.
pub fn profile_ll_and_gradient(
    x_gp: &[Vec<f64>],
    z: &[f64],
    ls: &Lengthscales,
) -> Result<(f64, Vec<f64>)> {
    check_inputs(x_gp, z, ls)?;
    let km = kernel::kernel_matrix(x_gp, ls, JitterPolicy::default())?;
    let alpha = km.cholesky().solve(&DVector::from_column_slice(z));
    let ll = ll_from_parts(z, &alpha, &km);

    let m = z.len();
    let q_raw = z.iter().zip(alpha.iter()).map(|(a, b)| a * b).sum::<f64>();
    // At the floor the quadratic term is constant in theta.
    let coef = if q_raw > m as f64 * TAU2_FLOOR {
        m as f64 / (2.0 * q_raw)
    } else {
        0.0
    };
    // The trace term needs the entries of Phi^-1; obtained from the factor.
    let inv = km.cholesky().inverse();
    let phi = km.matrix();
    let theta = ls.as_slice();
    let p = theta.len();
    let mut grad = vec![0.0; p];
    for b in 0..m {
        for a in (b + 1)..m {
            let w = 2.0 * (coef * alpha[a] * alpha[b] - 0.5 * inv[(a, b)]) * phi[(a, b)];
            if w == 0.0 {
                continue;
            }
            let (xa, xb) = (&x_gp[a], &x_gp[b]);
            for j in 0..p {
                let d = xa[j] - xb[j];
                grad[j] += w * d * d;
            }
        }
    }
    for (g, t) in grad.iter_mut().zip(theta) {
        *g /= t;
    }
    Ok((ll, grad))
}
