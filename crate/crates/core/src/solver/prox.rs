//! FISTA on the Gram form, used to cross-check coordinate descent.

use ndarray::ArrayView2;

use super::{soft_threshold, SolverConfig, SparseCode};

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
fn spectral_norm(gram: ArrayView2<f64>) -> f64 {
    let k = gram.nrows();
    let mut v = vec![1.0 / (k as f64).sqrt(); k];
    let mut est = 0.0;
    for _ in 0..500 {
        let w: Vec<f64> = gram
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(&v).map(|(a, b)| a * b).sum())
            .collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm;
        v = w.into_iter().map(|x| x / norm).collect();
        if (next - est).abs() <= 1e-12 * next {
            est = next;
            break;
        }
        est = next;
    }
    est
}

fn gram_apply(gram: ArrayView2<f64>, a: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for (j, &aj) in a.iter().enumerate() {
        if aj != 0.0 {
            for (o, g) in out.iter_mut().zip(gram.row(j).iter()) {
                *o += g * aj;
            }
        }
    }
    out
}

pub(super) fn fista(
    gram: ArrayView2<f64>,
    corr: &[f64],
    yty: f64,
    config: &SolverConfig,
    warm: Option<&[f64]>,
) -> SparseCode {
    let k = corr.len();
    let lambda = config.lambda;
    // A little headroom keeps the step safely below 1/L.
    let lip = spectral_norm(gram) * 1.000_001;
    if lip == 0.0 {
        return SparseCode::zero(k, lambda, 0.5 * yty);
    }
    let step = 1.0 / lip;
    let objective = |a: &[f64]| -> f64 {
        let ga = gram_apply(gram, a);
        let quad: f64 = a.iter().zip(&ga).map(|(x, y)| x * y).sum();
        let lin: f64 = a.iter().zip(corr).map(|(x, y)| x * y).sum();
        let l1: f64 = a.iter().map(|x| x.abs()).sum();
        (0.5 * yty - lin + 0.5 * quad).max(0.0) + lambda * l1
    };

    let mut x = warm.map_or_else(|| vec![0.0; k], <[f64]>::to_vec);
    let mut z = x.clone();
    let mut t = 1.0f64;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..config.max_iter {
        iterations += 1;
        let gz = gram_apply(gram, &z);
        let next: Vec<f64> = (0..k)
            .map(|j| soft_threshold(z[j] + step * (corr[j] - gz[j]), step * lambda))
            .collect();
        let max_change = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mom = (t - 1.0) / t_next;
        z = next.iter().zip(&x).map(|(n, o)| n + mom * (n - o)).collect();
        x = next;
        t = t_next;
        if config.record_trace {
            trace.push(objective(&x));
        }
        if max_change < config.tol {
            converged = true;
            break;
        }
    }
    let n_nonzero = x.iter().filter(|a| **a != 0.0).count();
    SparseCode {
        objective: objective(&x),
        coeffs: x,
        lambda,
        n_nonzero,
        converged,
        iterations,
        trace,
    }
}
