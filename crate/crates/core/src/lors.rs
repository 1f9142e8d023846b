//! Joint sparse + low-rank regression on a screened SNP set:
//!
//! ```text
//! min_{B, μ, L}  ‖Y − X B − 1μ − L‖²_F + ρ‖B‖₁ + λ‖L‖_*
//! ```
//!
//! Block coordinate descent over `L` (singular-value soft-thresholding at
//! λ/2), `μ` (column means) and `B` (one cyclic coordinate-descent sweep per
//! gene, soft-threshold at ρ/2). The thresholds are halved because the loss
//! carries no ½. Every block update is an exact minimisation, so the
//! objective never increases.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::marginal::center_columns;
use crate::matrix_io::{
    create_writer, format_value, open_reader, CoefficientMatrix, ExpressionMatrix, GenotypeMatrix,
};
use crate::svt::{singular_values, Shrinker};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorsOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LorsOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Starting point for the block iteration. The default is `B = 0`,
/// `μ = ȳ`, `L = 0`.
#[derive(Debug, Clone)]
pub struct LorsInit {
    pub b: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub low_rank: DMatrix<f64>,
}

/// Unlabelled solver output.
#[derive(Debug, Clone)]
pub struct LorsSolution {
    pub b: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub low_rank: DMatrix<f64>,
    /// Objective at the start, then after every full iteration.
    pub objective_trace: Vec<f64>,
    /// Objective after the L, μ and B updates of each iteration.
    pub block_trace: Vec<[f64; 3]>,
    pub rank_l: usize,
    pub iterations: usize,
    pub converged: bool,
}

impl LorsSolution {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().unwrap()
    }

    pub fn nnz_b(&self) -> usize {
        self.b.iter().filter(|v| **v != 0.0).count()
    }
}

#[derive(Debug, Clone)]
pub struct LorsFit {
    pub b: CoefficientMatrix,
    pub mu: DVector<f64>,
    pub low_rank: DMatrix<f64>,
    pub rho: f64,
    pub lambda: f64,
    pub objective_trace: Vec<f64>,
    pub rank_l: usize,
    pub nnz_b: usize,
    pub iterations: usize,
    pub converged: bool,
}

fn soft(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// One cyclic sweep of coordinate descent for
/// `‖y − X b‖² + ρ‖b‖₁` where `residual = y − X b` on entry; both `b` and
/// `residual` are updated in place. Zero-norm columns are pinned at 0.
pub fn lasso_sweep(residual: &mut [f64], x: &DMatrix<f64>, sq_norms: &[f64], b: &mut [f64], rho: f64) {
    let half = 0.5 * rho;
    for k in 0..x.ncols() {
        let xk = x.column(k);
        let xk = xk.as_slice();
        if sq_norms[k] == 0.0 {
            b[k] = 0.0;
            continue;
        }
        let old = b[k];
        let mut dot = 0.0;
        for (xi, ri) in xk.iter().zip(residual.iter()) {
            dot += xi * ri;
        }
        let new = soft(dot + sq_norms[k] * old, half) / sq_norms[k];
        let delta = new - old;
        if delta != 0.0 {
            for (ri, xi) in residual.iter_mut().zip(xk.iter()) {
                *ri -= xi * delta;
            }
            b[k] = new;
        }
    }
}

pub fn column_sq_norms(x: &DMatrix<f64>) -> Vec<f64> {
    x.column_iter().map(|c| c.norm_squared()).collect()
}

/// One sweep starting from `b` for the target column `y`; returns the
/// updated coefficients.
pub fn lasso_column_update(y: &DVector<f64>, x: &DMatrix<f64>, b: &DVector<f64>, rho: f64) -> DVector<f64> {
    let sq = column_sq_norms(x);
    let mut res: Vec<f64> = (y - x * b).iter().copied().collect();
    let mut out: Vec<f64> = b.iter().copied().collect();
    lasso_sweep(&mut res, x, &sq, &mut out, rho);
    DVector::from_vec(out)
}

/// Sweeps until the largest coefficient change falls below `tol`.
pub fn lasso_solve(y: &DVector<f64>, x: &DMatrix<f64>, rho: f64, tol: f64, max_sweeps: usize) -> DVector<f64> {
    let sq = column_sq_norms(x);
    let mut res: Vec<f64> = y.iter().copied().collect();
    let mut b = vec![0.0; x.ncols()];
    for _ in 0..max_sweeps {
        let before = b.clone();
        lasso_sweep(&mut res, x, &sq, &mut b, rho);
        let change = b.iter().zip(&before).fold(0.0f64, |m, (a, c)| m.max((a - c).abs()));
        if change <= tol {
            break;
        }
    }
    DVector::from_vec(b)
}

fn check_penalty(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "{name} must be finite and non-negative, got {v}"
        )));
    }
    Ok(())
}

/// Numeric solver on raw matrices. `lambda = 0` disables the low-rank block.
pub fn lors_solve(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    rho: f64,
    lambda: f64,
    opts: LorsOptions,
    init: Option<&LorsInit>,
) -> Result<LorsSolution> {
    check_penalty("rho", rho)?;
    check_penalty("lambda", lambda)?;
    let (n, q) = y.shape();
    let r = x.ncols();
    if x.nrows() != n {
        return Err(Error::Shape(format!(
            "genotypes have {} samples, expression has {n}",
            x.nrows()
        )));
    }
    if n == 0 || q == 0 {
        return Err(Error::InvalidParameter("empty expression matrix".into()));
    }
    if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let sq = column_sq_norms(x);
    let nf = n as f64;

    let (mut b, mut mu, mut l) = match init {
        Some(i) => {
            if i.b.shape() != (r, q) || i.mu.len() != q || i.low_rank.shape() != (n, q) {
                return Err(Error::Shape("initial point has the wrong shape".into()));
            }
            let l = if lambda > 0.0 { i.low_rank.clone() } else { DMatrix::zeros(n, q) };
            (i.b.clone(), i.mu.clone(), l)
        }
        None => (
            DMatrix::zeros(r, q),
            DVector::from_iterator(q, y.column_iter().map(|c| c.sum() / nf)),
            DMatrix::zeros(n, q),
        ),
    };
    let mut nuclear = if lambda > 0.0 && init.is_some() {
        singular_values(&l)?.sum()
    } else {
        0.0
    };

    // fit_res = Y − XB − 1μ − L.
    let mut fit_res = y - x * &b - &l;
    for (j, mut c) in fit_res.column_iter_mut().enumerate() {
        c.add_scalar_mut(-mu[j]);
    }
    let l1 = |b: &DMatrix<f64>| b.iter().map(|v| v.abs()).sum::<f64>();
    let objective = |res: &DMatrix<f64>, b: &DMatrix<f64>, nuc: f64| {
        res.norm_squared() + rho * l1(b) + lambda * nuc
    };

    let mut trace = vec![objective(&fit_res, &b, nuclear)];
    let mut blocks = Vec::new();
    let mut rank_l = 0;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..opts.max_iter {
        iterations = iter + 1;

        // L block.
        if lambda > 0.0 {
            let resid = &fit_res + &l;
            let s = Shrinker.shrink(&resid, 0.5 * lambda)?;
            fit_res = resid - &s.low_rank;
            l = s.low_rank;
            nuclear = s.nuclear_norm;
            rank_l = s.rank;
        }
        let f_l = objective(&fit_res, &b, nuclear);

        // μ block.
        for j in 0..q {
            let shift = fit_res.column(j).sum() / nf;
            mu[j] += shift;
            fit_res.column_mut(j).add_scalar_mut(-shift);
        }
        let f_mu = objective(&fit_res, &b, nuclear);

        // B block, gene by gene.
        let cols: Vec<(Vec<f64>, Vec<f64>)> = (0..q)
            .into_par_iter()
            .map(|j| {
                let mut res: Vec<f64> = fit_res.column(j).iter().copied().collect();
                let mut bj: Vec<f64> = b.column(j).iter().copied().collect();
                lasso_sweep(&mut res, x, &sq, &mut bj, rho);
                (res, bj)
            })
            .collect();
        for (j, (res, bj)) in cols.into_iter().enumerate() {
            fit_res.column_mut(j).copy_from_slice(&res);
            b.column_mut(j).copy_from_slice(&bj);
        }
        let f = objective(&fit_res, &b, nuclear);
        blocks.push([f_l, f_mu, f]);

        let prev = *trace.last().unwrap();
        trace.push(f);
        if (prev - f).abs() <= opts.tol * prev.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    Ok(LorsSolution {
        b,
        mu,
        low_rank: l,
        objective_trace: trace,
        block_trace: blocks,
        rank_l,
        iterations,
        converged,
    })
}

pub fn lors_fit(
    y: &ExpressionMatrix,
    x: &GenotypeMatrix,
    rho: f64,
    lambda: f64,
    opts: LorsOptions,
) -> Result<LorsFit> {
    if y.sample_ids != x.sample_ids {
        return Err(Error::Shape(
            "genotype and expression sample ids differ or are ordered differently".into(),
        ));
    }
    if let Some(k) = x
        .values
        .column_iter()
        .position(|c| c.iter().all(|v| *v == c[0]))
    {
        return Err(Error::DegenerateDesign(format!(
            "genotype column {} is constant",
            x.snp_ids[k]
        )));
    }
    let sol = lors_solve(&y.values, &x.values, rho, lambda, opts, None)?;
    let nnz_b = sol.nnz_b();
    Ok(LorsFit {
        b: CoefficientMatrix {
            values: sol.b,
            row_ids: x.snp_ids.clone(),
            col_ids: y.probe_ids.clone(),
        },
        mu: sol.mu,
        low_rank: sol.low_rank,
        rho,
        lambda,
        objective_trace: sol.objective_trace,
        rank_l: sol.rank_l,
        nnz_b,
        iterations: sol.iterations,
        converged: sol.converged,
    })
}

impl LorsFit {
    /// Writes B as a coefficient TSV and the scalars to `meta_path` as
    /// `key<TAB>value` lines.
    pub fn save(&self, b_path: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<()> {
        crate::matrix_io::save_matrix(&self.b, b_path)?;
        let path = meta_path.as_ref();
        let mut out = create_writer(path)?;
        let trace: Vec<String> = self.objective_trace.iter().map(|v| format_value(*v)).collect();
        let lines = [
            ("rho", format_value(self.rho)),
            ("lambda", format_value(self.lambda)),
            ("rank_l", self.rank_l.to_string()),
            ("nnz_b", self.nnz_b.to_string()),
            ("iterations", self.iterations.to_string()),
            ("converged", self.converged.to_string()),
            ("objective", format_value(*self.objective_trace.last().unwrap())),
            ("objective_trace", trace.join(",")),
        ];
        let io = |e| Error::io(path, e);
        for (k, v) in lines {
            writeln!(out, "{k}\t{v}").map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// Penalty at and above which `B = 0` solves the lasso block at the start
/// point `μ = ȳ`, `L = 0`.
pub fn rho_null(y: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    let (yc, _) = center_columns(y);
    2.0 * x.tr_mul(&yc).amax()
}

/// Penalty at and above which `L = 0` at the start point.
pub fn lambda_null(y: &DMatrix<f64>) -> Result<f64> {
    let (yc, _) = center_columns(y);
    Ok(2.0 * singular_values(&yc)?.iter().copied().fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub rho_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub holdout_fraction: f64,
    pub repeats: usize,
    pub seed: u64,
}

/// `points` values log-spaced from `hi / 100` to `hi`, ascending.
pub fn log_grid(hi: f64, points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![hi];
    }
    (0..points)
        .map(|k| hi * 10f64.powf(-2.0 * (points - 1 - k) as f64 / (points - 1) as f64))
        .collect()
}

impl CvConfig {
    /// Eight-point log grids from 1% of the null penalty to the null penalty,
    /// a 25% holdout and five repeats.
    pub fn default_for(y: &DMatrix<f64>, x: &DMatrix<f64>, seed: u64) -> Result<Self> {
        Ok(Self {
            rho_grid: log_grid(rho_null(y, x), 8),
            lambda_grid: log_grid(lambda_null(y)?, 8),
            holdout_fraction: 0.25,
            repeats: 5,
            seed,
        })
    }

    fn validate(&self) -> Result<()> {
        let sorted = |g: &[f64]| !g.is_empty() && g.windows(2).all(|w| w[0] <= w[1]);
        if !sorted(&self.rho_grid) || !sorted(&self.lambda_grid) {
            return Err(Error::InvalidParameter("grids must be non-empty and ascending".into()));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::InvalidParameter("holdout fraction must lie in (0, 1)".into()));
        }
        if self.repeats == 0 {
            return Err(Error::InvalidParameter("repeats must be at least 1".into()));
        }
        for &v in self.rho_grid.iter().chain(&self.lambda_grid) {
            check_penalty("grid value", v)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvEntry {
    pub rho: f64,
    pub lambda: f64,
    pub mean_error: f64,
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub best_rho: f64,
    pub best_lambda: f64,
    pub table: Vec<CvEntry>,
    /// Number of splits that were redrawn because a training column was constant.
    pub redraws: usize,
}

const MAX_REDRAWS: usize = 10;

fn has_constant_column(x: &DMatrix<f64>, rows: &[usize]) -> bool {
    x.column_iter().any(|c| {
        let first = c[rows[0]];
        rows.iter().all(|&i| c[i] == first)
    })
}

/// Monte-Carlo cross-validation over the (ρ, λ) grid. The held-out error is
/// `‖Y_test − X_test B̂ − 1μ̂‖²_F`; the low-rank term is sample-specific and
/// is not carried to held-out samples. Along the ρ grid each fit is warm
/// started from the previous (larger) ρ.
pub fn lors_cv(y: &DMatrix<f64>, x: &DMatrix<f64>, config: &CvConfig, opts: LorsOptions) -> Result<CvResult> {
    config.validate()?;
    let n = y.nrows();
    if x.nrows() != n {
        return Err(Error::Shape("genotype and expression sample counts differ".into()));
    }
    let n_test = ((n as f64) * config.holdout_fraction).round().max(1.0) as usize;
    if n < n_test + 10 {
        return Err(Error::InvalidParameter(format!(
            "holdout of {n_test} leaves fewer than 10 of {n} samples for training"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut splits = Vec::with_capacity(config.repeats);
    let mut redraws = 0;
    for _ in 0..config.repeats {
        let mut idx: Vec<usize> = (0..n).collect();
        let mut attempt = 0;
        loop {
            idx.shuffle(&mut rng);
            let train = &idx[n_test..];
            if !has_constant_column(x, train) || attempt == MAX_REDRAWS {
                break;
            }
            attempt += 1;
            redraws += 1;
        }
        let mut test = idx[..n_test].to_vec();
        let mut train = idx[n_test..].to_vec();
        test.sort_unstable();
        train.sort_unstable();
        splits.push((train, test));
    }

    // One job per (split, λ); ρ runs from largest to smallest with warm starts.
    let jobs: Vec<(usize, usize)> = (0..splits.len())
        .flat_map(|s| (0..config.lambda_grid.len()).map(move |l| (s, l)))
        .collect();
    let results: Vec<Result<Vec<f64>>> = jobs
        .par_iter()
        .map(|&(s, li)| {
            let (train, test) = &splits[s];
            let (y_tr, x_tr) = (y.select_rows(train), x.select_rows(train));
            let (y_te, x_te) = (y.select_rows(test), x.select_rows(test));
            let lambda = config.lambda_grid[li];
            let mut errors = vec![0.0; config.rho_grid.len()];
            let mut warm: Option<LorsInit> = None;
            for ri in (0..config.rho_grid.len()).rev() {
                let sol = lors_solve(&y_tr, &x_tr, config.rho_grid[ri], lambda, opts, warm.as_ref())?;
                let mut pred = &x_te * &sol.b;
                for (j, mut c) in pred.column_iter_mut().enumerate() {
                    c.add_scalar_mut(sol.mu[j]);
                }
                errors[ri] = (&y_te - pred).norm_squared();
                warm = Some(LorsInit {
                    b: sol.b,
                    mu: sol.mu,
                    low_rank: sol.low_rank,
                });
            }
            Ok(errors)
        })
        .collect();

    let (nr, nl) = (config.rho_grid.len(), config.lambda_grid.len());
    let mut sums = vec![0.0; nr * nl];
    for (&(_, li), res) in jobs.iter().zip(results) {
        for (ri, e) in res?.into_iter().enumerate() {
            sums[ri * nl + li] += e;
        }
    }
    let mut table = Vec::with_capacity(nr * nl);
    for (ri, &rho) in config.rho_grid.iter().enumerate() {
        for (li, &lambda) in config.lambda_grid.iter().enumerate() {
            table.push(CvEntry {
                rho,
                lambda,
                mean_error: sums[ri * nl + li] / config.repeats as f64,
            });
        }
    }
    let best = table
        .iter()
        .min_by(|a, b| {
            a.mean_error
                .total_cmp(&b.mean_error)
                .then(b.rho.total_cmp(&a.rho))
                .then(b.lambda.total_cmp(&a.lambda))
        })
        .expect("grid is non-empty");
    Ok(CvResult {
        best_rho: best.rho,
        best_lambda: best.lambda,
        table: table.clone(),
        redraws,
    })
}

/// One SNP–probe association from a fitted coefficient matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Association {
    pub snp_id: String,
    pub probe_id: String,
    pub effect: f64,
}

/// The `top_k` non-zero entries of B by decreasing magnitude; ties by
/// (snp_id, probe_id).
pub fn association_list(b: &CoefficientMatrix, top_k: usize) -> Result<Vec<Association>> {
    if top_k == 0 {
        return Err(Error::InvalidParameter("top_k must be at least 1".into()));
    }
    let mut all = Vec::new();
    for i in 0..b.values.nrows() {
        for j in 0..b.values.ncols() {
            let v = b.values[(i, j)];
            if v != 0.0 {
                all.push((i, j, v));
            }
        }
    }
    all.sort_by(|a, c| {
        c.2.abs()
            .total_cmp(&a.2.abs())
            .then_with(|| b.row_ids[a.0].cmp(&b.row_ids[c.0]))
            .then_with(|| b.col_ids[a.1].cmp(&b.col_ids[c.1]))
    });
    all.truncate(top_k);
    Ok(all
        .into_iter()
        .map(|(i, j, v)| Association {
            snp_id: b.row_ids[i].clone(),
            probe_id: b.col_ids[j].clone(),
            effect: v,
        })
        .collect())
}

pub fn save_associations(list: &[Association], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = create_writer(path)?;
    let io = |e| Error::io(path, e);
    writeln!(out, "snp_id\tprobe_id\teffect").map_err(io)?;
    for a in list {
        writeln!(out, "{}\t{}\t{}", a.snp_id, a.probe_id, format_value(a.effect)).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Reads `snp_id  probe_id  effect` rows; a first line starting with
/// `snp_id` is a header. The effect column may be absent (read as 0).
pub fn load_associations(path: impl AsRef<Path>) -> Result<Vec<Association>> {
    let path = path.as_ref();
    let mut list = Vec::new();
    for (lineno, line) in open_reader(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let f: Vec<&str> = line.split('\t').map(str::trim).collect();
        if line.trim().is_empty() || (lineno == 0 && f[0] == "snp_id") {
            continue;
        }
        if f.len() < 2 {
            return Err(Error::DimensionMismatch {
                path: path.to_path_buf(),
                line: lineno + 1,
                expected: 3,
                found: f.len(),
            });
        }
        let effect = match f.get(2) {
            Some(v) => v.parse::<f64>().map_err(|_| Error::NonNumeric {
                path: path.to_path_buf(),
                row: lineno + 1,
                col: 3,
                value: v.to_string(),
            })?,
            None => 0.0,
        };
        list.push(Association {
            snp_id: f[0].to_string(),
            probe_id: f[1].to_string(),
            effect,
        });
    }
    Ok(list)
}
