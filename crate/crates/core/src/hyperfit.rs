//! Lengthscale estimation: maximize the profile log-likelihood in
//! `log theta` with a box-bounded limited-memory BFGS and a fixed restart
//! scheme.

use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp;
use crate::interchange::class_rng;
use crate::kernel::Lengthscales;

const HISTORY: usize = 10;
const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;
const MAX_INIT_PAIRS: usize = 2000;
const INIT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Box on `log theta_j`.
    pub log_theta_bounds: (f64, f64),
    pub n_restarts: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            grad_tol: 1e-5,
            log_theta_bounds: (1e-3f64.ln(), 1e6f64.ln()),
            n_restarts: 3,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.log_theta_bounds;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidConfig(format!(
                "log-lengthscale bounds ({lo}, {hi}) must be finite and ordered"
            )));
        }
        if self.grad_tol.is_nan() || self.grad_tol <= 0.0 {
            return Err(Error::InvalidConfig("grad_tol must be positive".into()));
        }
        if self.max_iters == 0 || self.n_restarts == 0 {
            return Err(Error::InvalidConfig(
                "max_iters and n_restarts must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Median heuristic: `theta_j` is the median squared coordinate difference
/// over (up to 2000 seeded) point pairs, so a typical pair sits at
/// correlation `exp(-1)` per dimension.
pub fn init_lengthscales(x_gp: &[Vec<f64>], seed: u64) -> Result<Lengthscales> {
    let m = x_gp.len();
    if m < 2 {
        return Err(Error::InvalidDataset(format!(
            "lengthscale initialization needs at least 2 points, got {m}"
        )));
    }
    let p = x_gp[0].len();
    if let Some(x) = x_gp.iter().find(|x| x.len() != p) {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: x.len(),
        });
    }

    let total = m * (m - 1) / 2;
    let pairs: Vec<(usize, usize)> = if total <= MAX_INIT_PAIRS {
        (0..m)
            .flat_map(|i| ((i + 1)..m).map(move |j| (i, j)))
            .collect()
    } else {
        let mut rng = class_rng(seed, 0);
        (0..MAX_INIT_PAIRS)
            .map(|_| {
                let ij = index::sample(&mut rng, m, 2);
                (ij.index(0), ij.index(1))
            })
            .collect()
    };

    let theta = (0..p)
        .map(|j| {
            let first = x_gp[0][j];
            if x_gp.iter().all(|x| x[j] == first) {
                return 1.0;
            }
            let mut sq: Vec<f64> = pairs
                .iter()
                .map(|&(a, b)| (x_gp[a][j] - x_gp[b][j]).powi(2))
                .collect();
            sq.sort_by(f64::total_cmp);
            let n = sq.len();
            let med = if n % 2 == 1 {
                sq[n / 2]
            } else {
                0.5 * (sq[n / 2 - 1] + sq[n / 2])
            };
            med.max(INIT_FLOOR)
        })
        .collect();
    Lengthscales::new(theta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub start_log_theta: Vec<f64>,
    /// `None` when the run never produced a finite objective.
    pub final_ll: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Objective at the median-heuristic start (restart 0).
    pub initial_ll: f64,
    pub best_restart: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Euclidean norm of the projected gradient at the returned point.
    pub grad_norm: f64,
    /// Dimensions pinned at the lower / upper `log theta` bound.
    pub active_lower: Vec<usize>,
    pub active_upper: Vec<usize>,
    pub restarts: Vec<RestartSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LengthscaleFit {
    pub lengthscales: Lengthscales,
    pub final_ll: f64,
    pub diagnostics: Diagnostics,
}

struct RunResult {
    log_theta: Vec<f64>,
    ll: f64,
    iterations: usize,
    converged: bool,
    grad_norm: f64,
}

/// Negated objective and gradient; `None` when the kernel cannot be factored
/// or the value is non-finite.
fn objective(x_gp: &[Vec<f64>], z: &[f64], u: &[f64]) -> Option<(f64, Vec<f64>)> {
    let ls = Lengthscales::from_log(u).ok()?;
    let (ll, grad) = gp::profile_ll_and_gradient(x_gp, z, &ls).ok()?;
    if !ll.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return None;
    }
    Some((-ll, grad.into_iter().map(|g| -g).collect()))
}

fn projected_gradient(x: &[f64], g: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    x.iter()
        .zip(g)
        .map(|(&xi, &gi)| {
            if (xi <= lo && gi > 0.0) || (xi >= hi && gi < 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// L-BFGS two-loop recursion applied to `q`.
fn two_loop(q: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>)>) -> Vec<f64> {
    let mut r = q.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y) in history.iter().rev() {
        let rho = 1.0 / dot(y, s);
        let a = rho * dot(s, &r);
        for (ri, yi) in r.iter_mut().zip(y) {
            *ri -= a * yi;
        }
        alphas.push((a, rho));
    }
    if let Some((s, y)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        r.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y), (a, rho)) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &r);
        for (ri, si) in r.iter_mut().zip(s) {
            *ri += (a - b) * si;
        }
    }
    r
}

fn run(x_gp: &[Vec<f64>], z: &[f64], start: &[f64], cfg: &OptimizerConfig) -> Option<RunResult> {
    let (lo, hi) = cfg.log_theta_bounds;
    let mut x: Vec<f64> = start.iter().map(|u| u.clamp(lo, hi)).collect();
    let (mut f, mut g) = objective(x_gp, z, &x)?;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::new();
    let mut iterations = 0;
    let mut converged = false;

    loop {
        let pg = projected_gradient(&x, &g, lo, hi);
        if norm(&pg) <= cfg.grad_tol * f.abs().max(1.0) {
            converged = true;
            break;
        }
        if iterations >= cfg.max_iters {
            break;
        }
        iterations += 1;

        let mut d: Vec<f64> = two_loop(&pg, &history).into_iter().map(|v| -v).collect();
        for (di, pgi) in d.iter_mut().zip(&pg) {
            if *pgi == 0.0 {
                *di = 0.0;
            }
        }
        if dot(&d, &g) >= 0.0 {
            history.clear();
            d = pg.iter().map(|v| -v).collect();
        }
        let mut t = if history.is_empty() {
            (1.0 / d.iter().fold(0.0f64, |a, v| a.max(v.abs()))).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let xn: Vec<f64> = x
                .iter()
                .zip(&d)
                .map(|(xi, di)| (xi + t * di).clamp(lo, hi))
                .collect();
            let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            if s.iter().all(|v| *v == 0.0) {
                break;
            }
            if let Some((fnew, gnew)) = objective(x_gp, z, &xn) {
                if fnew <= f + ARMIJO_C1 * dot(&g, &s) {
                    accepted = Some((xn, s, fnew, gnew));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, s, fnew, gnew)) = accepted else {
            break;
        };

        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-10 * norm(&s) * norm(&y) {
            history.push_back((s, y));
            if history.len() > HISTORY {
                history.pop_front();
            }
        }
        x = xn;
        f = fnew;
        g = gnew;
    }

    let grad_norm = norm(&projected_gradient(&x, &g, lo, hi));
    Some(RunResult {
        log_theta: x,
        ll: -f,
        iterations,
        converged,
        grad_norm,
    })
}

/// Best of `n_restarts` bounded quasi-Newton runs. Restart 0 starts at the
/// median heuristic, restart `r` at that point shifted by a seeded
/// `U(-1, 1)` per dimension in log space.
pub fn optimize_lengthscales(
    x_gp: &[Vec<f64>],
    z: &[f64],
    cfg: &OptimizerConfig,
) -> Result<LengthscaleFit> {
    cfg.validate()?;
    let init = init_lengthscales(x_gp, cfg.seed)?;
    let (lo, hi) = cfg.log_theta_bounds;
    let base: Vec<f64> = init.log().into_iter().map(|u| u.clamp(lo, hi)).collect();

    let initial_ll = match objective(x_gp, z, &base) {
        Some((f, _)) => -f,
        None => {
            return Err(Error::Optimization(
                "objective is not finite at the initial lengthscales".into(),
            ))
        }
    };

    let starts: Vec<Vec<f64>> = (0..cfg.n_restarts)
        .map(|r| {
            if r == 0 {
                base.clone()
            } else {
                let mut rng = class_rng(cfg.seed, r as u64);
                base.iter()
                    .map(|u| (u + rng.random_range(-1.0..1.0)).clamp(lo, hi))
                    .collect()
            }
        })
        .collect();

    let results: Vec<Option<RunResult>> = starts.iter().map(|s| run(x_gp, z, s, cfg)).collect();

    let mut best: Option<usize> = None;
    for (i, r) in results.iter().enumerate() {
        if let Some(r) = r {
            if best.is_none_or(|b| r.ll > results[b].as_ref().unwrap().ll) {
                best = Some(i);
            }
        }
    }
    let Some(best) = best else {
        return Err(Error::Optimization(
            "every restart failed to evaluate the objective".into(),
        ));
    };

    let restarts = starts
        .iter()
        .zip(&results)
        .map(|(s, r)| RestartSummary {
            start_log_theta: s.clone(),
            final_ll: r.as_ref().map(|r| r.ll),
            iterations: r.as_ref().map_or(0, |r| r.iterations),
            converged: r.as_ref().is_some_and(|r| r.converged),
        })
        .collect();

    let winner = results[best].as_ref().unwrap();
    let diagnostics = Diagnostics {
        initial_ll,
        best_restart: best,
        iterations: winner.iterations,
        converged: winner.converged,
        grad_norm: winner.grad_norm,
        active_lower: (0..winner.log_theta.len())
            .filter(|&j| winner.log_theta[j] <= lo)
            .collect(),
        active_upper: (0..winner.log_theta.len())
            .filter(|&j| winner.log_theta[j] >= hi)
            .collect(),
        restarts,
    };
    Ok(LengthscaleFit {
        lengthscales: Lengthscales::from_log(&winner.log_theta)?,
        final_ll: winner.ll,
        diagnostics,
    })
}
