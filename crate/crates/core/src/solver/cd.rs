use ndarray::{ArrayView1, ArrayView2};

use super::{check_finite, lasso_objective, soft_threshold, SolverConfig, SparseCode};
use crate::error::{Error, Result};

/// Outcome of one pass over a set of coordinates.
struct Sweep {
    max_change: f64,
}

/// Gram-form state: `grad = B'y - G a` is kept up to date after every move.
struct GramState<'a> {
    gram: ArrayView2<'a, f64>,
    corr: &'a [f64],
    yty: f64,
    lambda: f64,
    coeffs: Vec<f64>,
    grad: Vec<f64>,
}

impl<'a> GramState<'a> {
    fn new(gram: ArrayView2<'a, f64>, corr: &'a [f64], yty: f64, lambda: f64, warm: Option<&[f64]>) -> Self {
        let k = corr.len();
        let mut grad = corr.to_vec();
        let coeffs = warm.map_or_else(|| vec![0.0; k], <[f64]>::to_vec);
        for (j, &a) in coeffs.iter().enumerate() {
            if a != 0.0 {
                super::active::axpy_col(&mut grad, gram, j, -a);
            }
        }
        Self {
            gram,
            corr,
            yty,
            lambda,
            coeffs,
            grad,
        }
    }

    #[inline]
    fn update(&mut self, j: usize) -> f64 {
        let gjj = self.gram[[j, j]];
        if gjj <= 0.0 {
            return 0.0;
        }
        let old = self.coeffs[j];
        let new = soft_threshold(self.grad[j] + gjj * old, self.lambda) / gjj;
        let delta = new - old;
        if delta != 0.0 {
            self.coeffs[j] = new;
            super::active::axpy_col(&mut self.grad, self.gram, j, -delta);
        }
        delta.abs()
    }

    fn sweep_all(&mut self) -> Sweep {
        let mut max_change = 0.0f64;
        for j in 0..self.coeffs.len() {
            max_change = max_change.max(self.update(j));
        }
        Sweep { max_change }
    }

    fn sweep_active(&mut self, active: &[usize]) -> Sweep {
        let mut max_change = 0.0f64;
        for &j in active {
            max_change = max_change.max(self.update(j));
        }
        Sweep { max_change }
    }

    fn active(&self) -> Vec<usize> {
        (0..self.coeffs.len()).filter(|&j| self.coeffs[j] != 0.0).collect()
    }

    fn kkt_ok(&self, slack: f64) -> bool {
        self.coeffs.iter().zip(&self.grad).all(|(&a, &g)| {
            if a != 0.0 {
                (g - self.lambda * a.signum()).abs() <= slack
            } else {
                g.abs() <= self.lambda + slack
            }
        })
    }

    /// Objective from the maintained gradient:
    /// `0.5 y'y - a'c + 0.5 a'G a = 0.5 y'y - 0.5 a'(c + grad)`.
    fn objective(&self) -> f64 {
        let quad: f64 = self
            .coeffs
            .iter()
            .zip(self.corr.iter().zip(&self.grad))
            .filter(|(a, _)| **a != 0.0)
            .map(|(a, (c, g))| a * (c + g))
            .sum();
        let l1: f64 = self.coeffs.iter().map(|a| a.abs()).sum();
        (0.5 * self.yty - 0.5 * quad).max(0.0) + self.lambda * l1
    }
}

#[inline]
fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Cyclic coordinate descent with active-set cycling on a precomputed Gram matrix.
///
/// A full sweep over every coordinate is followed by sweeps over the current
/// support until it settles; the loop ends when a full sweep moves no
/// coordinate by more than `tol` and the KKT conditions hold. The returned
/// objective is the Gram-form estimate; callers with the operator at hand
/// should recompute it directly.
pub(crate) fn gram_cd(
    gram: ArrayView2<f64>,
    corr: &[f64],
    yty: f64,
    config: &SolverConfig,
    warm: Option<&[f64]>,
) -> SparseCode {
    let k = corr.len();
    let mut st = GramState::new(gram, corr, yty, config.lambda, warm);
    if warm.is_none() && corr.iter().all(|c| c.abs() <= config.lambda) {
        return SparseCode::zero(k, config.lambda, 0.5 * yty);
    }
    let slack = config.kkt_slack();
    let mut trace = Vec::new();
    if config.record_trace {
        trace.push(st.objective());
    }
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..config.max_iter {
        let full = st.sweep_all();
        iterations += 1;
        if config.record_trace {
            trace.push(st.objective());
        }
        if full.max_change < config.tol && st.kkt_ok(slack) {
            converged = true;
            break;
        }
        let active = st.active();
        for _ in 0..config.max_iter {
            let s = st.sweep_active(&active);
            iterations += 1;
            if config.record_trace {
                trace.push(st.objective());
            }
            if s.max_change < config.tol {
                break;
            }
        }
    }
    let n_nonzero = st.coeffs.iter().filter(|a| **a != 0.0).count();
    SparseCode {
        objective: st.objective(),
        coeffs: st.coeffs,
        lambda: config.lambda,
        n_nonzero,
        converged,
        iterations,
        trace,
    }
}

/// Coordinate descent that keeps the residual instead of a Gram matrix.
///
/// Each full sweep costs `O(m k)` and nothing is precomputed, which suits
/// operators that are used only once (e.g. a patch operator with some
/// measurement rows removed).
pub fn lasso_solve_residual(
    b: ArrayView2<f64>,
    y: ArrayView1<f64>,
    config: &SolverConfig,
    warm: Option<&[f64]>,
) -> Result<SparseCode> {
    config.validate()?;
    let (m, k) = b.dim();
    if m == 0 || k == 0 {
        return Err(Error::shape("m >= 1 and k >= 1", format!("{m} x {k}")));
    }
    if y.len() != m {
        return Err(Error::shape(m, y.len()));
    }
    check_finite(b.iter().copied())?;
    check_finite(y.iter().copied())?;
    let cols: Vec<Vec<f64>> = (0..k).map(|j| b.column(j).to_vec()).collect();
    let norms: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
    let lambda = config.lambda;
    let slack = config.kkt_slack();

    let mut coeffs = match warm {
        Some(w) if w.len() == k => w.to_vec(),
        Some(w) => return Err(Error::shape(k, w.len())),
        None => vec![0.0; k],
    };
    let mut r = y.to_vec();
    for (j, &a) in coeffs.iter().enumerate() {
        if a != 0.0 {
            axpy(&mut r, -a, &cols[j]);
        }
    }
    let dot = |c: &[f64], r: &[f64]| -> f64 { c.iter().zip(r).map(|(x, y)| x * y).sum() };
    let objective = |r: &[f64], a: &[f64]| -> f64 {
        0.5 * r.iter().map(|v| v * v).sum::<f64>() + lambda * a.iter().map(|v| v.abs()).sum::<f64>()
    };

    let update = |j: usize, coeffs: &mut [f64], r: &mut [f64]| -> f64 {
        if norms[j] <= 0.0 {
            return 0.0;
        }
        let old = coeffs[j];
        let new = soft_threshold(dot(&cols[j], r) + norms[j] * old, lambda) / norms[j];
        let delta = new - old;
        if delta != 0.0 {
            coeffs[j] = new;
            axpy(r, -delta, &cols[j]);
        }
        delta.abs()
    };

    let mut trace = Vec::new();
    if config.record_trace {
        trace.push(objective(&r, &coeffs));
    }
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..config.max_iter {
        let mut max_change = 0.0f64;
        for j in 0..k {
            max_change = max_change.max(update(j, &mut coeffs, &mut r));
        }
        iterations += 1;
        if config.record_trace {
            trace.push(objective(&r, &coeffs));
        }
        if max_change < config.tol {
            let kkt_ok = (0..k).all(|j| {
                let g = dot(&cols[j], &r);
                if coeffs[j] != 0.0 {
                    (g - lambda * coeffs[j].signum()).abs() <= slack
                } else {
                    g.abs() <= lambda + slack
                }
            });
            if kkt_ok {
                converged = true;
                break;
            }
        }
        let active: Vec<usize> = (0..k).filter(|&j| coeffs[j] != 0.0).collect();
        for _ in 0..config.max_iter {
            let mut max_change = 0.0f64;
            for &j in &active {
                max_change = max_change.max(update(j, &mut coeffs, &mut r));
            }
            iterations += 1;
            if config.record_trace {
                trace.push(objective(&r, &coeffs));
            }
            if max_change < config.tol {
                break;
            }
        }
    }
    let n_nonzero = coeffs.iter().filter(|a| **a != 0.0).count();
    Ok(SparseCode {
        objective: lasso_objective(b, y, &coeffs, lambda),
        coeffs,
        lambda,
        n_nonzero,
        converged,
        iterations,
        trace,
    })
}
