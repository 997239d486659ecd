//! L1-regularized least squares: `min_a 0.5 * ||y - B a||^2 + lambda * ||a||_1`.
//!
//! Coordinate descent is the workhorse; proximal gradient (FISTA) is kept as
//! an independent cross-check. [`LassoOperator`] caches the Gram matrix of a
//! fixed operator so that many right-hand sides can be solved cheaply.

mod active;
mod cd;
mod prox;

pub use cd::lasso_solve_residual;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis, ShapeBuilder};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    CoordinateDescent,
    ProximalGradient,
    /// Feature-sign search: exact support solves, far fewer passes than
    /// coordinate descent on coherent operators.
    ActiveSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub lambda: f64,
    /// Sweep (or iteration) cap.
    pub max_iter: usize,
    /// Bound on the largest per-coordinate change of a converged sweep, and
    /// the relative KKT slack.
    pub tol: f64,
    pub algorithm: Algorithm,
    /// Keep the objective after every sweep in [`SparseCode::trace`].
    pub record_trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            max_iter: 1000,
            tol: 1e-7,
            algorithm: Algorithm::CoordinateDescent,
            record_trace: false,
        }
    }
}

impl SolverConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::config("max_iter must be >= 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::config(format!("tol must be > 0, got {}", self.tol)));
        }
        Ok(())
    }

    /// Absolute KKT slack for active coordinates.
    pub(crate) fn kkt_slack(&self) -> f64 {
        if self.lambda > 0.0 {
            self.tol * self.lambda
        } else {
            self.tol
        }
    }
}

/// Solves the lasso given `G = B'B`, `c = B'y` and `y'y`, with the
/// configured algorithm. The objective is the Gram-form value.
pub(crate) fn gram_solve(
    gram: ArrayView2<f64>,
    corr: &[f64],
    yty: f64,
    config: &SolverConfig,
    warm: Option<&[f64]>,
) -> SparseCode {
    match config.algorithm {
        Algorithm::CoordinateDescent => cd::gram_cd(gram, corr, yty, config, warm),
        Algorithm::ProximalGradient => prox::fista(gram, corr, yty, config, warm),
        Algorithm::ActiveSet => active::feature_sign(gram, corr, yty, config, warm),
    }
}

/// Solves the lasso for the operator `b` restricted to the rows where `keep`
/// is true, reusing the Gram matrix `gram` of the full operator.
pub(crate) fn solve_kept_rows(
    b: ArrayView2<f64>,
    gram: ArrayView2<f64>,
    y: &[f64],
    keep: &[bool],
    config: &SolverConfig,
) -> Result<SparseCode> {
    let dropped: Vec<usize> = (0..b.nrows()).filter(|&r| !keep[r]).collect();
    let kept: Vec<usize> = (0..b.nrows()).filter(|&r| keep[r]).collect();
    let y_kept: ndarray::Array1<f64> = (0..y.len()).map(|r| if keep[r] { y[r] } else { 0.0 }).collect();
    let corr = b.t().dot(&y_kept).to_vec();
    let yty = y_kept.dot(&y_kept);
    let mut cols = active::DowndatedGram::new(gram, select_rows(b, &dropped));
    let code = active::feature_sign_with(&mut cols, &corr, yty, config, None);
    if code.converged {
        return Ok(code);
    }
    let b_kept = select_rows(b, &kept);
    let y_sel: ndarray::Array1<f64> = kept.iter().map(|&r| y[r]).collect();
    let mut rest = lasso_solve_residual(b_kept.view(), y_sel.view(), config, Some(&code.coeffs))?;
    rest.iterations += code.iterations;
    Ok(rest)
}

/// Rows `rows` of `b`, column-major.
pub(crate) fn select_rows(b: ArrayView2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), b.ncols()).f());
    for (j, col) in b.columns().into_iter().enumerate() {
        let mut o = out.column_mut(j);
        for (i, &r) in rows.iter().enumerate() {
            o[i] = col[r];
        }
    }
    out
}

/// Coefficients of one solve plus bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseCode {
    pub coeffs: Vec<f64>,
    pub lambda: f64,
    pub objective: f64,
    pub n_nonzero: usize,
    pub converged: bool,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<f64>,
}

impl SparseCode {
    pub(crate) fn zero(k: usize, lambda: f64, objective: f64) -> Self {
        Self {
            coeffs: vec![0.0; k],
            lambda,
            objective,
            n_nonzero: 0,
            converged: true,
            iterations: 0,
            trace: Vec::new(),
        }
    }

    /// `(index, value)` pairs of the nonzero coefficients.
    pub fn support(&self) -> Vec<(usize, f64)> {
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, *v))
            .collect()
    }

    pub fn l1(&self) -> f64 {
        self.coeffs.iter().map(|v| v.abs()).sum()
    }
}

#[inline]
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// `0.5 * ||y - B a||^2 + lambda * ||a||_1`, evaluated directly.
pub fn lasso_objective(b: ArrayView2<f64>, y: ArrayView1<f64>, coeffs: &[f64], lambda: f64) -> f64 {
    let r = residual(b, y, coeffs);
    0.5 * r.iter().map(|v| v * v).sum::<f64>() + lambda * coeffs.iter().map(|v| v.abs()).sum::<f64>()
}

fn residual(b: ArrayView2<f64>, y: ArrayView1<f64>, coeffs: &[f64]) -> Vec<f64> {
    let mut r = y.to_vec();
    for (j, &a) in coeffs.iter().enumerate() {
        if a != 0.0 {
            for (ri, bij) in r.iter_mut().zip(b.column(j).iter()) {
                *ri -= bij * a;
            }
        }
    }
    r
}

/// Largest KKT violation, scaled by `lambda` (by 1 when `lambda == 0`).
///
/// For active coordinates the violation is `|B_j'(y - Ba) - lambda sign(a_j)|`,
/// for inactive ones `max(0, |B_j'(y - Ba)| - lambda)`.
pub fn kkt_violation(b: ArrayView2<f64>, y: ArrayView1<f64>, coeffs: &[f64], lambda: f64) -> f64 {
    let r = residual(b, y, coeffs);
    let scale = if lambda > 0.0 { lambda } else { 1.0 };
    coeffs
        .iter()
        .enumerate()
        .map(|(j, &a)| {
            let g: f64 = b.column(j).iter().zip(&r).map(|(x, y)| x * y).sum();
            let v = if a != 0.0 {
                (g - lambda * a.signum()).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            };
            v / scale
        })
        .fold(0.0, f64::max)
}

fn check_finite(values: impl IntoIterator<Item = f64>) -> Result<()> {
    if let Some(index) = values.into_iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    Ok(())
}

/// A fixed `m x k` operator with its cached Gram matrix.
#[derive(Debug, Clone)]
pub struct LassoOperator {
    b: Array2<f64>,
    gram: Array2<f64>,
}

impl LassoOperator {
    pub fn new(b: Array2<f64>) -> Result<Self> {
        if b.nrows() == 0 || b.ncols() == 0 {
            return Err(Error::shape(
                "m >= 1 and k >= 1",
                format!("{} x {}", b.nrows(), b.ncols()),
            ));
        }
        check_finite(b.iter().copied())?;
        let gram = b.t().dot(&b);
        Ok(Self { b, gram })
    }

    pub fn rows(&self) -> usize {
        self.b.nrows()
    }

    pub fn cols(&self) -> usize {
        self.b.ncols()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.b
    }

    pub fn gram(&self) -> &Array2<f64> {
        &self.gram
    }

    /// Solves for one right-hand side, optionally warm-started.
    pub fn solve(&self, y: ArrayView1<f64>, config: &SolverConfig, warm: Option<&[f64]>) -> Result<SparseCode> {
        config.validate()?;
        if y.len() != self.rows() {
            return Err(Error::shape(self.rows(), y.len()));
        }
        check_finite(y.iter().copied())?;
        if let Some(w) = warm {
            if w.len() != self.cols() {
                return Err(Error::shape(self.cols(), w.len()));
            }
            check_finite(w.iter().copied())?;
        }
        let corr = self.b.t().dot(&y);
        let yty = y.dot(&y);
        let mut code = gram_solve(self.gram.view(), corr.as_slice().unwrap(), yty, config, warm);
        code.objective = lasso_objective(self.b.view(), y, &code.coeffs, config.lambda);
        Ok(code)
    }

    /// Solves every column of `ys` independently.
    pub fn solve_batch(&self, ys: ArrayView2<f64>, config: &SolverConfig) -> Result<Vec<SparseCode>> {
        if ys.nrows() != self.rows() {
            return Err(Error::shape(
                format!("{} rows", self.rows()),
                format!("{} rows", ys.nrows()),
            ));
        }
        let cols: Vec<_> = ys.axis_iter(Axis(1)).collect();
        crate::par::map_slice(&cols, |col| self.solve(*col, config, None))
            .into_iter()
            .enumerate()
            .map(|(index, r)| {
                r.map_err(|e| Error::Column {
                    index,
                    source: Box::new(e),
                })
            })
            .collect()
    }
}

/// Solves one lasso problem for operator `b`.
pub fn lasso_solve(b: ArrayView2<f64>, y: ArrayView1<f64>, config: &SolverConfig) -> Result<SparseCode> {
    config.validate()?;
    LassoOperator::new(b.to_owned())?.solve(y, config, None)
}

/// Column-wise [`lasso_solve`]; errors carry the failing column index.
pub fn lasso_solve_batch(b: ArrayView2<f64>, ys: ArrayView2<f64>, config: &SolverConfig) -> Result<Vec<SparseCode>> {
    config.validate()?;
    LassoOperator::new(b.to_owned())?.solve_batch(ys, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_problem(m: usize, k: usize, seed: u64) -> (Array2<f64>, Array1<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = Array2::from_shape_fn((m, k), |_| rng.random_range(-1.0..1.0));
        let y = Array1::from_shape_fn(m, |_| rng.random_range(-1.0..1.0));
        (b, y)
    }

    #[test]
    fn zero_rhs_gives_zero_code() {
        let (b, _) = random_problem(5, 7, 1);
        let y = Array1::zeros(5);
        let code = lasso_solve(b.view(), y.view(), &SolverConfig::with_lambda(0.3)).unwrap();
        assert!(code.coeffs.iter().all(|&v| v == 0.0));
        assert_eq!(code.objective, 0.0);
        assert_eq!(code.n_nonzero, 0);
    }

    #[test]
    fn identity_soft_threshold() {
        let b = Array2::eye(2);
        let y = array![1.0, 0.05];
        let code = lasso_solve(b.view(), y.view(), &SolverConfig::with_lambda(0.1)).unwrap();
        assert!((code.coeffs[0] - 0.9).abs() < 1e-12);
        assert_eq!(code.coeffs[1], 0.0);
        assert!(code.converged);
    }

    #[test]
    fn tie_at_lambda_resolves_to_zero() {
        let b = Array2::eye(1);
        let y = array![0.25];
        let code = lasso_solve(b.view(), y.view(), &SolverConfig::with_lambda(0.25)).unwrap();
        assert_eq!(code.coeffs, vec![0.0]);
    }

    #[test]
    fn large_lambda_gives_exact_zero() {
        let (b, y) = random_problem(6, 9, 4);
        let lmax = b.t().dot(&y).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let code = lasso_solve(b.view(), y.view(), &SolverConfig::with_lambda(lmax)).unwrap();
        assert!(code.coeffs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_non_finite_and_bad_config() {
        let (b, mut y) = random_problem(3, 3, 2);
        y[1] = f64::INFINITY;
        assert!(matches!(
            lasso_solve(b.view(), y.view(), &SolverConfig::default()),
            Err(Error::NonFinite { index: 1 })
        ));
        let y = Array1::zeros(3);
        let bad = SolverConfig {
            tol: 0.0,
            ..Default::default()
        };
        assert!(lasso_solve(b.view(), y.view(), &bad).unwrap_err().is_config());
        let bad = SolverConfig::with_lambda(-1.0);
        assert!(lasso_solve(b.view(), y.view(), &bad).is_err());
    }

    #[test]
    fn iteration_cap_sets_flag() {
        let (b, y) = random_problem(20, 40, 3);
        let cfg = SolverConfig {
            lambda: 1e-4,
            max_iter: 1,
            tol: 1e-14,
            ..Default::default()
        };
        let code = lasso_solve(b.view(), y.view(), &cfg).unwrap();
        assert!(!code.converged);
    }

    #[test]
    fn kkt_holds_at_solution() {
        for seed in 0..20 {
            let (b, y) = random_problem(12, 30, seed);
            let cfg = SolverConfig::with_lambda(0.15);
            let code = lasso_solve(b.view(), y.view(), &cfg).unwrap();
            assert!(code.converged);
            let v = kkt_violation(b.view(), y.view(), &code.coeffs, cfg.lambda);
            assert!(v <= 1e-6, "seed {seed}: {v}");
            let direct = lasso_objective(b.view(), y.view(), &code.coeffs, cfg.lambda);
            assert_eq!(code.objective, direct);
            assert_eq!(code.n_nonzero, code.support().len());
        }
    }

    #[test]
    fn objective_monotone_per_sweep() {
        for seed in 0..10 {
            let (b, y) = random_problem(15, 40, 100 + seed);
            let cfg = SolverConfig {
                lambda: 0.05,
                record_trace: true,
                ..Default::default()
            };
            let code = lasso_solve(b.view(), y.view(), &cfg).unwrap();
            assert!(code.trace.len() >= 2);
            for w in code.trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1e-300), "{:?}", w);
            }
        }
    }

    #[test]
    fn proximal_gradient_agrees_with_cd() {
        for seed in 0..10 {
            let (b, y) = random_problem(10, 16, 200 + seed);
            let cd = lasso_solve(b.view(), y.view(), &SolverConfig::with_lambda(0.2)).unwrap();
            let pg_cfg = SolverConfig {
                lambda: 0.2,
                algorithm: Algorithm::ProximalGradient,
                max_iter: 200_000,
                tol: 1e-12,
                ..Default::default()
            };
            let pg = lasso_solve(b.view(), y.view(), &pg_cfg).unwrap();
            assert!(
                (cd.objective - pg.objective).abs() <= 1e-8,
                "{} vs {}",
                cd.objective,
                pg.objective
            );
        }
    }

    #[test]
    fn residual_form_agrees_with_gram_form() {
        for seed in 0..10 {
            let (b, y) = random_problem(25, 60, 300 + seed);
            let cfg = SolverConfig::with_lambda(0.1);
            let g = lasso_solve(b.view(), y.view(), &cfg).unwrap();
            let r = lasso_solve_residual(b.view(), y.view(), &cfg, None).unwrap();
            assert!(r.converged);
            assert!((g.objective - r.objective).abs() <= 1e-9 * g.objective.max(1.0));
            assert!(kkt_violation(b.view(), y.view(), &r.coeffs, cfg.lambda) <= 1e-6);
        }
    }

    #[test]
    fn warm_start_from_solution_is_stable() {
        let (b, y) = random_problem(8, 12, 11);
        let cfg = SolverConfig::with_lambda(0.1);
        let op = LassoOperator::new(b).unwrap();
        let cold = op.solve(y.view(), &cfg, None).unwrap();
        let warm = op.solve(y.view(), &cfg, Some(&cold.coeffs)).unwrap();
        assert!(warm.iterations <= cold.iterations);
        assert!(warm.objective <= cold.objective + 1e-12);
    }

    fn active_set(lambda: f64) -> SolverConfig {
        SolverConfig {
            algorithm: Algorithm::ActiveSet,
            ..SolverConfig::with_lambda(lambda)
        }
    }

    #[test]
    fn active_set_agrees_with_cd() {
        for seed in 0..20 {
            let (b, y) = random_problem(12, 30, 400 + seed);
            let cd = lasso_solve(b.view(), y.view(), &SolverConfig::with_lambda(0.1)).unwrap();
            let fs = lasso_solve(b.view(), y.view(), &active_set(0.1)).unwrap();
            assert!(fs.converged);
            assert!((cd.objective - fs.objective).abs() <= 1e-9 * cd.objective.max(1.0));
            assert!(kkt_violation(b.view(), y.view(), &fs.coeffs, 0.1) <= 1e-6);
        }
    }

    #[test]
    fn active_set_trace_is_monotone_and_warm_starts_work() {
        let (b, y) = random_problem(20, 50, 17);
        let cfg = SolverConfig {
            record_trace: true,
            ..active_set(0.05)
        };
        let op = LassoOperator::new(b).unwrap();
        let cold = op.solve(y.view(), &cfg, None).unwrap();
        for w in cold.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].abs(), "{w:?}");
        }
        let warm = op.solve(y.view(), &cfg, Some(&cold.coeffs)).unwrap();
        assert!(warm.iterations <= 1);
        assert!((warm.objective - cold.objective).abs() <= 1e-12 * cold.objective);
    }

    #[test]
    fn active_set_handles_duplicate_columns() {
        // The support system is singular when both copies enter; the solve
        // still reaches the optimum via the coordinate-descent finish.
        let (mut b, y) = random_problem(6, 5, 21);
        let c0 = b.column(0).to_owned();
        b.column_mut(4).assign(&c0);
        let cfg = active_set(0.01);
        let fs = lasso_solve(b.view(), y.view(), &cfg).unwrap();
        let cd = lasso_solve(b.view(), y.view(), &SolverConfig::with_lambda(0.01)).unwrap();
        assert!((fs.objective - cd.objective).abs() <= 1e-9);
    }

    #[test]
    fn kept_rows_match_an_explicit_row_subset() {
        for seed in 0..10 {
            let (b, y) = random_problem(80, 40, 500 + seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let keep: Vec<bool> = (0..80).map(|_| rng.random_bool(0.7)).collect();
            let rows: Vec<usize> = (0..80).filter(|&r| keep[r]).collect();
            let sub = select_rows(b.view(), &rows);
            let ys: Array1<f64> = rows.iter().map(|&r| y[r]).collect();
            let cfg = active_set(0.05);
            let direct = lasso_solve(sub.view(), ys.view(), &cfg).unwrap();
            let gram = b.t().dot(&b);
            let code = solve_kept_rows(b.view(), gram.view(), y.as_slice().unwrap(), &keep, &cfg).unwrap();
            assert!(code.converged, "seed {seed}: {} iterations", code.iterations);
            let obj = lasso_objective(sub.view(), ys.view(), &code.coeffs, 0.05);
            assert!((obj - direct.objective).abs() <= 1e-9 * direct.objective.max(1.0));
        }
    }

    #[test]
    fn batch_consistency() {
        let (b, _) = random_problem(9, 14, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ys = Array2::from_shape_fn((9, 6), |_| rng.random_range(-1.0..1.0));
        let cfg = SolverConfig::with_lambda(0.1);
        let all = lasso_solve_batch(b.view(), ys.view(), &cfg).unwrap();

        let one = lasso_solve(b.view(), ys.column(2), &cfg).unwrap();
        let single = lasso_solve_batch(b.view(), ys.slice(ndarray::s![.., 2..3]), &cfg).unwrap();
        assert_eq!(single[0], one);
        assert_eq!(all[2], one);

        let first = lasso_solve_batch(b.view(), ys.slice(ndarray::s![.., ..3]), &cfg).unwrap();
        let second = lasso_solve_batch(b.view(), ys.slice(ndarray::s![.., 3..]), &cfg).unwrap();
        let joined: Vec<_> = first.into_iter().chain(second).collect();
        assert_eq!(joined, all);
    }

    #[test]
    fn duplicated_column_gives_identical_codes() {
        let (b, y) = random_problem(7, 10, 8);
        let ys = ndarray::stack(Axis(1), &[y.view(), y.view()]).unwrap();
        let codes = lasso_solve_batch(b.view(), ys.view(), &SolverConfig::default()).unwrap();
        assert_eq!(codes[0], codes[1]);
    }

    #[test]
    fn batch_error_carries_column() {
        let (b, _) = random_problem(3, 4, 9);
        let mut ys = Array2::zeros((3, 3));
        ys[[0, 2]] = f64::NAN;
        match lasso_solve_batch(b.view(), ys.view(), &SolverConfig::default()).unwrap_err() {
            Error::Column { index, .. } => assert_eq!(index, 2),
            e => panic!("unexpected {e}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn joint_scaling_scales_solution(seed in 0u64..10_000, lambda in 0.01f64..0.5) {
            let (b, y) = random_problem(6, 10, seed);
            let cfg = SolverConfig { lambda, tol: 1e-12, max_iter: 100_000, ..Default::default() };
            let a1 = lasso_solve(b.view(), y.view(), &cfg).unwrap();
            let y2 = &y * 2.0;
            let cfg2 = SolverConfig { lambda: 2.0 * lambda, ..cfg };
            let a2 = lasso_solve(b.view(), y2.view(), &cfg2).unwrap();
            for (u, v) in a1.coeffs.iter().zip(&a2.coeffs) {
                prop_assert!((2.0 * u - v).abs() <= 1e-8, "{} vs {}", 2.0 * u, v);
            }
        }
    }
}
