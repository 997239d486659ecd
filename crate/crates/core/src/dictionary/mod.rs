//! Over-complete patch dictionaries: learning, coding and storage.
//!
//! Learning alternates lasso coding of every training patch (warm-started
//! from the previous codes) with one block-coordinate pass over the atoms
//! using the sufficient statistics `A = sum a a'` and `B = sum x a'`. Each
//! atom update is the exact minimizer on the unit sphere, so in full-batch
//! mode the training objective never increases between alternations.

mod io;

pub use io::{load_dictionary, save_dictionary};

use ndarray::{s, Array2, ArrayView1, ArrayView2, ShapeBuilder};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::{self, Algorithm, LassoOperator, SolverConfig, SparseCode};
use crate::volume::{PatchBatch, PatchSpec};

/// Atoms must have unit norm to within this after every public operation.
pub const NORM_TOLERANCE: f64 = 1e-10;

const CHUNK: usize = 64;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub lambda: f64,
    pub iterations: usize,
    pub dataset_hash: String,
    pub seed: u64,
    #[serde(default)]
    pub objective_trace: Vec<f64>,
    /// Mean number of nonzero coefficients per training patch at the end.
    #[serde(default)]
    pub mean_active: f64,
    /// Mean `||x - D a||^2 / ||x||^2` over nonzero training patches at the end.
    #[serde(default)]
    pub mean_relative_error: f64,
}

/// Column-normalized `n x k` atom matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    spec: PatchSpec,
    atoms: Array2<f64>,
    pub provenance: Provenance,
}

impl Dictionary {
    /// Wraps `atoms` after checking every column has unit norm.
    pub fn new(spec: PatchSpec, atoms: Array2<f64>, provenance: Provenance) -> Result<Self> {
        Self::check(&spec, &atoms, NORM_TOLERANCE)?;
        Ok(Self {
            spec,
            atoms: to_fortran(atoms),
            provenance,
        })
    }

    /// Normalizes every column; zero columns are rejected.
    pub fn from_unnormalized(spec: PatchSpec, mut atoms: Array2<f64>) -> Result<Self> {
        for (j, mut col) in atoms.columns_mut().into_iter().enumerate() {
            let norm = col.dot(&col).sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::AtomNorm { atom: j, norm });
            }
            col.mapv_inplace(|v| v / norm);
        }
        Self::new(spec, atoms, Provenance::default())
    }

    pub(crate) fn check(spec: &PatchSpec, atoms: &Array2<f64>, tol: f64) -> Result<()> {
        if atoms.nrows() != spec.n() {
            return Err(Error::shape(
                format!("{} rows", spec.n()),
                format!("{} rows", atoms.nrows()),
            ));
        }
        if atoms.ncols() == 0 {
            return Err(Error::config("dictionary needs at least one atom"));
        }
        for (j, col) in atoms.columns().into_iter().enumerate() {
            let norm = col.dot(&col).sqrt();
            if !((norm - 1.0).abs() <= tol) {
                return Err(Error::AtomNorm { atom: j, norm });
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> &PatchSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn k(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn atoms(&self) -> &Array2<f64> {
        &self.atoms
    }

    pub fn atom(&self, j: usize) -> ArrayView1<'_, f64> {
        self.atoms.column(j)
    }

    /// `D a` for each code, one column per code.
    pub fn decode(&self, codes: &[SparseCode]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((self.n(), codes.len()).f());
        for (i, code) in codes.iter().enumerate() {
            if code.coeffs.len() != self.k() {
                return Err(Error::shape(self.k(), code.coeffs.len()));
            }
            let mut col = out.column_mut(i);
            for (j, &a) in code.coeffs.iter().enumerate() {
                if a != 0.0 {
                    col.scaled_add(a, &self.atoms.column(j));
                }
            }
        }
        Ok(out)
    }
}

fn to_fortran(a: Array2<f64>) -> Array2<f64> {
    if a.t().is_standard_layout() {
        return a;
    }
    let (n, k) = a.dim();
    let mut out = Array2::zeros((n, k).f());
    out.assign(&a);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// `k` distinct randomly chosen nonzero training patches, normalized.
    RandomPatches,
    Provided(Dictionary),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnConfig {
    pub k: usize,
    pub lambda: f64,
    pub n_epochs: usize,
    /// Patches per update. At or above the training-set size learning runs
    /// in full-batch mode; below it runs online over shuffled mini-batches.
    pub batch_size: usize,
    pub seed: u64,
    pub init: Init,
    /// Stop once an epoch lowers the objective by less than this fraction.
    pub plateau_tol: f64,
    pub coding_tol: f64,
    pub coding_max_iter: usize,
    pub algorithm: Algorithm,
}

impl LearnConfig {
    /// `k = 2n` atoms, `lambda = 0.1`.
    pub fn for_patch(spec: &PatchSpec) -> Self {
        Self {
            k: 2 * spec.n(),
            lambda: 0.1,
            n_epochs: 10,
            batch_size: usize::MAX,
            seed: 0,
            init: Init::RandomPatches,
            plateau_tol: 1e-5,
            coding_tol: 1e-6,
            coding_max_iter: 1000,
            algorithm: Algorithm::ActiveSet,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n_epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("k, n_epochs and batch_size must be >= 1"));
        }
        self.coding().validate()?;
        if !(self.plateau_tol >= 0.0) {
            return Err(Error::config("plateau_tol must be >= 0"));
        }
        Ok(())
    }

    fn coding(&self) -> SolverConfig {
        SolverConfig {
            lambda: self.lambda,
            tol: self.coding_tol,
            max_iter: self.coding_max_iter,
            algorithm: self.algorithm,
            ..SolverConfig::default()
        }
    }
}

/// Sparse coefficients `(atom, value)` of one patch.
type Support = Vec<(usize, f64)>;

fn support_of(coeffs: &[f64]) -> Support {
    coeffs
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(j, v)| (j, *v))
        .collect()
}

/// FNV-1a over the bit patterns of the training matrix.
pub fn dataset_hash(x: ArrayView2<f64>) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in (x.nrows() as u64)
        .to_le_bytes()
        .into_iter()
        .chain((x.ncols() as u64).to_le_bytes())
    {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    for col in x.columns() {
        for v in col {
            for b in v.to_bits().to_le_bytes() {
                h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    format!("{h:016x}")
}

/// Codes columns `cols` of `x` against `atoms` with Gram `gram`, optionally warm-started.
fn code_columns(
    atoms: &Array2<f64>,
    gram: &Array2<f64>,
    x: ArrayView2<f64>,
    cols: &[usize],
    warm: Option<&[Support]>,
    cfg: &SolverConfig,
) -> Vec<Support> {
    let k = atoms.ncols();
    let n_chunks = cols.len().div_ceil(CHUNK);
    let chunks = crate::par::map_range(n_chunks, |c| {
        let idx = &cols[c * CHUNK..((c + 1) * CHUNK).min(cols.len())];
        let mut xc = Array2::zeros((x.nrows(), idx.len()).f());
        for (t, &i) in idx.iter().enumerate() {
            xc.column_mut(t).assign(&x.column(i));
        }
        let corr = atoms.t().dot(&xc);
        let mut dense_warm = vec![0.0; k];
        idx.iter()
            .enumerate()
            .map(|(t, &i)| {
                let xi = xc.column(t);
                let yty = xi.dot(&xi);
                let c = corr.column(t).to_vec();
                let w = warm.map(|w| {
                    dense_warm.iter_mut().for_each(|v| *v = 0.0);
                    for &(j, v) in &w[i] {
                        dense_warm[j] = v;
                    }
                    dense_warm.as_slice()
                });
                let code = solver::gram_solve(gram.view(), &c, yty, cfg, w);
                support_of(&code.coeffs)
            })
            .collect::<Vec<_>>()
    });
    chunks.into_iter().flatten().collect()
}

/// `||x_i - D a_i||^2` for each listed column.
fn residual_norms(atoms: &Array2<f64>, x: ArrayView2<f64>, cols: &[usize], codes: &[Support]) -> Vec<f64> {
    crate::par::map_range(cols.len(), |t| {
        let mut r = x.column(cols[t]).to_vec();
        for &(j, a) in &codes[t] {
            for (ri, dj) in r.iter_mut().zip(atoms.column(j).iter()) {
                *ri -= a * dj;
            }
        }
        r.iter().map(|v| v * v).sum()
    })
}

fn objective(lambda: f64, residuals: &[f64], codes: &[Support]) -> f64 {
    let data: f64 = residuals.iter().map(|r| 0.5 * r).sum();
    let l1: f64 = codes.iter().flat_map(|c| c.iter().map(|(_, v)| v.abs())).sum();
    data + lambda * l1
}

/// Sufficient statistics `A = sum a a'` (k x k) and `B = sum x a'` (n x k).
fn statistics(k: usize, x: ArrayView2<f64>, cols: &[usize], codes: &[Support]) -> (Array2<f64>, Array2<f64>) {
    let n = x.nrows();
    let mut a = Array2::<f64>::zeros((k, k));
    for code in codes {
        for &(i, vi) in code {
            let mut row = a.row_mut(i);
            for &(j, vj) in code {
                row[j] += vi * vj;
            }
        }
    }
    let mut b = Array2::<f64>::zeros((n, k).f());
    for (t, code) in codes.iter().enumerate() {
        let xi = x.column(cols[t]);
        for &(j, v) in code {
            b.column_mut(j).scaled_add(v, &xi);
        }
    }
    (a, b)
}

/// One block-coordinate pass over the atoms. Atoms with `A_jj == 0` are
/// replaced, in index order, by the not-yet-used patches from `replacements`
/// (worst represented first), normalized. Returns the replaced atom indices.
fn update_atoms(
    atoms: &mut Array2<f64>,
    a: &Array2<f64>,
    b: &Array2<f64>,
    x: ArrayView2<f64>,
    replacements: &[usize],
) -> Vec<usize> {
    let (n, k) = atoms.dim();
    let mut replaced = Vec::new();
    let mut next_replacement = replacements.iter().copied().filter(|&i| {
        let c = x.column(i);
        c.dot(&c) > 0.0
    });
    let mut u = vec![0.0; n];
    for j in 0..k {
        let ajj = a[[j, j]];
        if ajj <= 0.0 {
            if let Some(i) = next_replacement.next() {
                let col = x.column(i);
                let norm = col.dot(&col).sqrt();
                atoms.column_mut(j).assign(&col.mapv(|v| v / norm));
                replaced.push(j);
            }
            continue;
        }
        // u = (b_j - D a_j) / A_jj + d_j
        u.iter_mut().zip(b.column(j).iter()).for_each(|(ui, bi)| *ui = *bi);
        for (l, &alj) in a.row(j).iter().enumerate() {
            if alj != 0.0 {
                let dl = atoms.column(l);
                let dl = dl.as_slice().expect("column-major atoms");
                for (ui, d) in u.iter_mut().zip(dl) {
                    *ui -= alj * d;
                }
            }
        }
        let dj = atoms.column(j);
        for (ui, d) in u.iter_mut().zip(dj.iter()) {
            *ui = *ui / ajj + d;
        }
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 && norm.is_finite() {
            for (d, ui) in atoms.column_mut(j).iter_mut().zip(&u) {
                *d = ui / norm;
            }
        }
    }
    replaced
}

/// Indices of `cols` sorted by decreasing residual (ties by position).
fn worst_first(cols: &[usize], residuals: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..cols.len()).collect();
    order.sort_by(|&p, &q| residuals[q].total_cmp(&residuals[p]).then(p.cmp(&q)));
    order.into_iter().map(|t| cols[t]).collect()
}

/// One dictionary update given codes for every column of `patches`.
///
/// Each used atom is replaced by the exact minimizer of the data term over
/// the unit sphere with the other atoms fixed; atoms no code uses are
/// replaced by the worst-represented patches.
pub fn update_dictionary_step(
    atoms: ArrayView2<f64>,
    codes: &[SparseCode],
    patches: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    let (n, k) = atoms.dim();
    if patches.nrows() != n {
        return Err(Error::shape(format!("{n} rows"), format!("{} rows", patches.nrows())));
    }
    if codes.len() != patches.ncols() {
        return Err(Error::shape(format!("{} codes", patches.ncols()), codes.len()));
    }
    if let Some(c) = codes.iter().find(|c| c.coeffs.len() != k) {
        return Err(Error::shape(k, c.coeffs.len()));
    }
    let cols: Vec<usize> = (0..patches.ncols()).collect();
    let supports: Vec<Support> = codes.iter().map(|c| support_of(&c.coeffs)).collect();
    let mut out = to_fortran(atoms.to_owned());
    let residuals = residual_norms(&out, patches, &cols, &supports);
    let (a, b) = statistics(k, patches, &cols, &supports);
    update_atoms(&mut out, &a, &b, patches, &worst_first(&cols, &residuals));
    Ok(out)
}

fn initial_atoms(x: ArrayView2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
    let nonzero: Vec<usize> = (0..x.ncols())
        .filter(|&i| x.column(i).iter().any(|v| *v != 0.0))
        .collect();
    if k > nonzero.len() {
        return Err(Error::config(format!(
            "cannot seed {k} atoms from {} nonzero training patches",
            nonzero.len()
        )));
    }
    let chosen: Vec<usize> = nonzero.choose_multiple(rng, k).copied().collect();
    let mut atoms = Array2::zeros((x.nrows(), k).f());
    for (j, &i) in chosen.iter().enumerate() {
        let col = x.column(i);
        let norm = col.dot(&col).sqrt();
        atoms.column_mut(j).assign(&col.mapv(|v| v / norm));
    }
    Ok(atoms)
}

/// Learns a dictionary for the patches in `patches`.
pub fn learn_dictionary(patches: &PatchBatch, config: &LearnConfig) -> Result<Dictionary> {
    config.validate()?;
    let x = patches.matrix.view();
    let (n, count) = x.dim();
    if count == 0 || x.iter().all(|v| *v == 0.0) {
        return Err(Error::DegenerateData("training set has no nonzero patch".into()));
    }
    if let Some(index) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut atoms = match &config.init {
        Init::RandomPatches => initial_atoms(x, config.k, &mut rng)?,
        Init::Provided(d) => {
            if d.n() != n || d.k() != config.k {
                return Err(Error::shape(
                    format!("{n} x {}", config.k),
                    format!("{} x {}", d.n(), d.k()),
                ));
            }
            d.atoms.clone()
        }
    };
    let coding = config.coding();
    let all: Vec<usize> = (0..count).collect();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut codes: Vec<Support>;

    if config.batch_size >= count {
        codes = vec![Vec::new(); count];
        for epoch in 0..config.n_epochs {
            let gram = atoms.t().dot(&atoms);
            codes = code_columns(&atoms, &gram, x, &all, Some(&codes), &coding);
            let residuals = residual_norms(&atoms, x, &all, &codes);
            let (a, b) = statistics(config.k, x, &all, &codes);
            let replaced = update_atoms(&mut atoms, &a, &b, x, &worst_first(&all, &residuals));
            if !replaced.is_empty() {
                log::debug!("epoch {epoch}: replaced {} unused atoms", replaced.len());
            }
            let residuals = residual_norms(&atoms, x, &all, &codes);
            let obj = objective(config.lambda, &residuals, &codes);
            iterations += 1;
            log::info!("epoch {epoch}: objective {obj:.6e}");
            let plateau = trace
                .last()
                .is_some_and(|&prev: &f64| prev - obj < config.plateau_tol * prev.abs());
            trace.push(obj);
            if plateau {
                break;
            }
        }
    } else {
        // Online mode: statistics accumulate over every mini-batch seen so far.
        let k = config.k;
        let mut a_acc = Array2::<f64>::zeros((k, k));
        let mut b_acc = Array2::<f64>::zeros((n, k).f());
        let mut order = all.clone();
        for epoch in 0..config.n_epochs {
            order.shuffle(&mut rng);
            let mut epoch_obj = 0.0;
            for batch in order.chunks(config.batch_size) {
                let gram = atoms.t().dot(&atoms);
                let codes = code_columns(&atoms, &gram, x, batch, None, &coding);
                let residuals = residual_norms(&atoms, x, batch, &codes);
                epoch_obj += objective(config.lambda, &residuals, &codes);
                let (a, b) = statistics(k, x, batch, &codes);
                a_acc += &a;
                b_acc += &b;
                update_atoms(&mut atoms, &a_acc, &b_acc, x, &worst_first(batch, &residuals));
            }
            iterations += 1;
            log::info!("epoch {epoch}: mini-batch objective {epoch_obj:.6e}");
            let plateau = trace
                .last()
                .is_some_and(|&prev: &f64| (prev - epoch_obj).abs() < config.plateau_tol * prev.abs());
            trace.push(epoch_obj);
            if plateau {
                break;
            }
        }
        let gram = atoms.t().dot(&atoms);
        codes = code_columns(&atoms, &gram, x, &all, None, &coding);
    }

    let residuals = residual_norms(&atoms, x, &all, &codes);
    let (mean_active, mean_relative_error) = summarize(x, &all, &codes, &residuals);
    let provenance = Provenance {
        lambda: config.lambda,
        iterations,
        dataset_hash: dataset_hash(x),
        seed: config.seed,
        objective_trace: trace,
        mean_active,
        mean_relative_error,
    };
    let spec = PatchSpec {
        stride: [1, 1, 1],
        ..patches.spec
    };
    Dictionary::new(spec, atoms, provenance)
}

fn summarize(x: ArrayView2<f64>, cols: &[usize], codes: &[Support], residuals: &[f64]) -> (f64, f64) {
    let active = codes.iter().map(|c| c.len() as f64).sum::<f64>() / codes.len().max(1) as f64;
    let mut err = 0.0;
    let mut counted = 0usize;
    for (t, &i) in cols.iter().enumerate() {
        let xi = x.column(i);
        let e = xi.dot(&xi);
        if e > 0.0 {
            err += residuals[t] / e;
            counted += 1;
        }
    }
    (active, if counted > 0 { err / counted as f64 } else { 0.0 })
}

/// Sparse-codes every patch over `dictionary`.
pub fn encode(dictionary: &Dictionary, patches: ArrayView2<f64>, lambda: f64) -> Result<Vec<SparseCode>> {
    let config = SolverConfig {
        algorithm: Algorithm::ActiveSet,
        ..SolverConfig::with_lambda(lambda)
    };
    encode_with(dictionary, patches, &config)
}

pub fn encode_with(
    dictionary: &Dictionary,
    patches: ArrayView2<f64>,
    config: &SolverConfig,
) -> Result<Vec<SparseCode>> {
    if patches.nrows() != dictionary.n() {
        return Err(Error::shape(
            format!("patches of length {}", dictionary.n()),
            format!("patches of length {}", patches.nrows()),
        ));
    }
    LassoOperator::new(dictionary.atoms.clone())?.solve_batch(patches, config)
}

/// Sparsity and fidelity of a dictionary on a patch set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepresentationStats {
    pub mean_active: f64,
    pub mean_relative_error: f64,
}

pub fn representation_stats(
    dictionary: &Dictionary,
    patches: ArrayView2<f64>,
    lambda: f64,
) -> Result<RepresentationStats> {
    let codes = encode(dictionary, patches, lambda)?;
    let decoded = dictionary.decode(&codes)?;
    let cols: Vec<usize> = (0..patches.ncols()).collect();
    let supports: Vec<Support> = codes.iter().map(|c| support_of(&c.coeffs)).collect();
    let residuals: Vec<f64> = (0..patches.ncols())
        .map(|i| {
            let d = &patches.column(i) - &decoded.column(i);
            d.dot(&d)
        })
        .collect();
    let (mean_active, mean_relative_error) = summarize(patches, &cols, &supports, &residuals);
    Ok(RepresentationStats {
        mean_active,
        mean_relative_error,
    })
}

/// Objective of the learning problem for given atoms and codes.
pub fn learning_objective(atoms: ArrayView2<f64>, codes: &[SparseCode], patches: ArrayView2<f64>, lambda: f64) -> f64 {
    let atoms = to_fortran(atoms.to_owned());
    let cols: Vec<usize> = (0..patches.ncols()).collect();
    let supports: Vec<Support> = codes.iter().map(|c| support_of(&c.coeffs)).collect();
    let residuals = residual_norms(&atoms, patches, &cols, &supports);
    objective(lambda, &residuals, &supports)
}

/// Atoms `range` of a dictionary as a view (used by tests and tools).
pub fn atom_block(d: &Dictionary, range: std::ops::Range<usize>) -> ArrayView2<'_, f64> {
    d.atoms.slice(s![.., range])
}
