use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2};

use super::{cd, SolverConfig, SparseCode};

/// Smallest accepted ratio between Cholesky pivots of a support system.
const MIN_PIVOT_RATIO: f64 = 1e-6;

/// Column access to a symmetric Gram matrix.
pub(crate) trait GramColumns {
    fn column(&mut self, j: usize) -> &[f64];
}

/// A dense Gram matrix; symmetric, so a contiguous row serves as the column.
pub(crate) struct DenseGram<'a> {
    gram: ArrayView2<'a, f64>,
    scratch: Vec<f64>,
}

impl<'a> DenseGram<'a> {
    pub(crate) fn new(gram: ArrayView2<'a, f64>) -> Self {
        Self {
            gram,
            scratch: Vec::new(),
        }
    }
}

impl GramColumns for DenseGram<'_> {
    fn column(&mut self, j: usize) -> &[f64] {
        let col = self.gram.column(j);
        if let Some(s) = col.to_slice().or_else(|| self.gram.row(j).to_slice()) {
            return s;
        }
        self.scratch = col.to_vec();
        &self.scratch
    }
}

/// Gram matrix of an operator with some rows removed:
/// `G_kept = G - B_d' B_d`, columns computed on demand and cached.
pub(crate) struct DowndatedGram<'a> {
    gram: DenseGram<'a>,
    /// Removed rows, `d x k`, one contiguous column per atom.
    dropped: Array2<f64>,
    cache: HashMap<usize, Vec<f64>>,
}

impl<'a> DowndatedGram<'a> {
    pub(crate) fn new(gram: ArrayView2<'a, f64>, dropped: Array2<f64>) -> Self {
        Self {
            gram: DenseGram::new(gram),
            dropped,
            cache: HashMap::new(),
        }
    }
}

impl GramColumns for DowndatedGram<'_> {
    fn column(&mut self, j: usize) -> &[f64] {
        if !self.cache.contains_key(&j) {
            let mut col = self.gram.column(j).to_vec();
            let dj = self.dropped.column(j);
            for (i, c) in col.iter_mut().enumerate() {
                *c -= self.dropped.column(i).dot(&dj);
            }
            self.cache.insert(j, col);
        }
        &self.cache[&j]
    }
}

/// `y += alpha * G[:, j]`.
#[inline]
pub(super) fn axpy_col(y: &mut [f64], gram: ArrayView2<f64>, j: usize, alpha: f64) {
    let col = gram.column(j);
    if let Some(s) = col.to_slice().or_else(|| gram.row(j).to_slice()) {
        y.iter_mut().zip(s).for_each(|(yi, g)| *yi += alpha * g);
    } else {
        y.iter_mut().zip(col.iter()).for_each(|(yi, g)| *yi += alpha * g);
    }
}

/// Feature-sign search.
///
/// Zero coordinates join the support one at a time (largest KKT violation
/// first); each step solves the equality-constrained problem on the current
/// support and sign pattern, then moves to the best point among the target
/// and the sign changes on the way. Every step lowers the objective.
///
/// Returns `converged = false` without further work if the iteration cap is
/// hit or a support system is not positive definite; callers finish those
/// with coordinate descent.
pub(crate) fn feature_sign_with(
    gram: &mut dyn GramColumns,
    corr: &[f64],
    yty: f64,
    config: &SolverConfig,
    warm: Option<&[f64]>,
) -> SparseCode {
    let k = corr.len();
    let lambda = config.lambda;
    if warm.is_none() && corr.iter().all(|c| c.abs() <= lambda) {
        return SparseCode::zero(k, lambda, 0.5 * yty);
    }
    let slack = config.kkt_slack();
    let mut x = warm.map_or_else(|| vec![0.0; k], <[f64]>::to_vec);
    let mut grad = corr.to_vec();
    for (j, &a) in x.iter().enumerate() {
        if a != 0.0 {
            grad.iter_mut().zip(gram.column(j)).for_each(|(g, c)| *g -= a * c);
        }
    }
    let mut active: Vec<usize> = (0..k).filter(|&j| x[j] != 0.0).collect();
    let mut theta: Vec<f64> = active.iter().map(|&j| x[j].signum()).collect();
    // 0.5 y'y - c'x + 0.5 x'Gx = 0.5 y'y - 0.5 x'(c + grad)
    let objective = |x: &[f64], grad: &[f64]| -> f64 {
        let mut quad = 0.0;
        let mut l1 = 0.0;
        for j in 0..k {
            if x[j] != 0.0 {
                quad += x[j] * (corr[j] + grad[j]);
                l1 += x[j].abs();
            }
        }
        (0.5 * yty - 0.5 * quad).max(0.0) + lambda * l1
    };
    let mut trace = Vec::new();
    if config.record_trace {
        trace.push(objective(&x, &grad));
    }

    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iter {
        let nonzero_ok = active
            .iter()
            .all(|&j| x[j] != 0.0 && (grad[j] - lambda * x[j].signum()).abs() <= slack);
        if nonzero_ok {
            let mut best: Option<(usize, f64)> = None;
            for j in 0..k {
                let g = grad[j].abs();
                if x[j] == 0.0 && g > lambda + slack && best.is_none_or(|(_, b)| g > b) {
                    best = Some((j, g));
                }
            }
            match best {
                None => {
                    converged = true;
                    break;
                }
                Some((j, _)) => {
                    active.push(j);
                    theta.push(grad[j].signum());
                }
            }
        }

        let n = active.len();
        let mut g_aa = DMatrix::zeros(n, n);
        for c in 0..n {
            let col = gram.column(active[c]);
            for r in 0..n {
                g_aa[(r, c)] = col[active[r]];
            }
        }
        // Target z solves G_AA z = G_AA x_A + grad_A - lambda theta
        // (equivalently c_A - lambda theta), written as a step from x.
        let rhs = DVector::from_fn(n, |r, _| grad[active[r]] - lambda * theta[r]);
        let Some(chol) = g_aa.clone().cholesky() else {
            break;
        };
        // Near-singular supports give steps dominated by rounding.
        let pivots = chol.l_dirty().diagonal();
        let (lo, hi) = pivots
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), p| (lo.min(*p), hi.max(*p)));
        if !(lo > MIN_PIVOT_RATIO * hi) {
            break;
        }
        let step = chol.solve(&rhs);
        iterations += 1;

        let current: Vec<f64> = active.iter().map(|&j| x[j]).collect();
        let gd: f64 = (0..n).map(|r| grad[active[r]] * step[r]).sum();
        let q = (&g_aa * &step).dot(&step);
        let l1_now: f64 = current.iter().map(|v| v.abs()).sum();
        // Objective change along x + t * step.
        let change = |t: f64, vals: &[f64]| -> f64 {
            let l1: f64 = vals.iter().map(|v| v.abs()).sum();
            -t * gd + 0.5 * t * t * q + lambda * (l1 - l1_now)
        };
        let mut candidates: Vec<(f64, Option<usize>)> = vec![(1.0, None)];
        for r in 0..n {
            let (a, b) = (current[r], current[r] + step[r]);
            if a != 0.0 && a.signum() != b.signum() {
                let t = -a / step[r];
                if t > 0.0 && t < 1.0 {
                    candidates.push((t, Some(r)));
                }
            }
        }
        candidates.sort_by(|p, q| p.0.total_cmp(&q.0));
        let mut best: Option<(f64, Vec<f64>)> = None;
        for &(t, crossing) in &candidates {
            let mut vals: Vec<f64> = (0..n).map(|r| current[r] + t * step[r]).collect();
            if let Some(r) = crossing {
                vals[r] = 0.0;
            }
            let d = change(t, &vals);
            if best.as_ref().is_none_or(|(b, _)| d < *b) {
                best = Some((d, vals));
            }
        }
        let (delta_obj, vals) = best.expect("at least the full step");
        if !(delta_obj < 0.0) {
            break;
        }
        let before = objective(&x, &grad);
        let (x_prev, grad_prev) = (x.clone(), grad.clone());
        for (r, &j) in active.iter().enumerate() {
            let delta = vals[r] - x[j];
            if delta != 0.0 {
                x[j] = vals[r];
                grad.iter_mut().zip(gram.column(j)).for_each(|(g, c)| *g -= delta * c);
            }
        }
        if !(objective(&x, &grad) <= before) {
            x = x_prev;
            grad = grad_prev;
            break;
        }
        active.retain(|&j| x[j] != 0.0);
        theta = active.iter().map(|&j| x[j].signum()).collect();
        if config.record_trace {
            trace.push(objective(&x, &grad));
        }
    }

    SparseCode {
        objective: objective(&x, &grad),
        n_nonzero: x.iter().filter(|v| **v != 0.0).count(),
        coeffs: x,
        lambda,
        converged,
        iterations,
        trace,
    }
}

/// Feature-sign on a dense Gram matrix, finished by coordinate descent if needed.
pub(crate) fn feature_sign(
    gram: ArrayView2<f64>,
    corr: &[f64],
    yty: f64,
    config: &SolverConfig,
    warm: Option<&[f64]>,
) -> SparseCode {
    let code = feature_sign_with(&mut DenseGram::new(gram), corr, yty, config, warm);
    if code.converged {
        return code;
    }
    let mut rest = cd::gram_cd(gram, corr, yty, config, Some(&code.coeffs));
    rest.iterations += code.iterations;
    if config.record_trace {
        let mut trace = code.trace;
        trace.extend(rest.trace);
        rest.trace = trace;
    }
    rest
}
