//! Per-SNP marginal regression with a nuclear-norm-penalised hidden-factor
//! term:
//!
//! ```text
//! min_{β, μ, L}  ½‖Y − xβ − 1μ − L‖²_F + λ‖L‖_*
//! ```
//!
//! solved by alternating `L ← S_λ(Y − xβ − 1μ)` with an ordinary least-squares
//! refit of `(β, μ)` on `Y − L`. Starting from `β = 0`, `μ = ȳ`, `L = 0` every
//! iterate keeps `1ᵀ(Y − xβ − 1μ) = 0`, so the residual is the rank-one update
//! `Y_c − x̃β` of the centred expression matrix, `L` has zero column means and
//! `μ = ȳ − x̄β`. See [`MarginalScreen`] for how each iteration avoids a full
//! decomposition.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix_io::{CoefficientMatrix, ExpressionMatrix, GenotypeMatrix};
use crate::secular::filter_rank_one;
use crate::svt::{singular_values, GramSide, Shrinker};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_RANK_CAP: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalOptions {
    pub lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl MarginalOptions {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// One SNP's fit. `beta` and `mu` are the 1×q rows stored as vectors.
#[derive(Debug, Clone)]
pub struct SnpFit {
    pub beta: DVector<f64>,
    pub mu: DVector<f64>,
    pub low_rank: DMatrix<f64>,
    /// Objective at the starting point, then after every iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct MarginalFit {
    pub beta_hat: CoefficientMatrix,
    /// Row `i` holds the intercepts fitted alongside SNP `i`.
    pub mu_hat: DMatrix<f64>,
    pub lambda: f64,
    pub iterations_per_snp: Vec<usize>,
    pub converged: Vec<bool>,
    /// SNPs with a constant genotype column; their rows are zero.
    pub degenerate: Vec<bool>,
}

/// Threshold that leaves at most `rank_cap` singular values of the centred
/// expression matrix above it. Falls back to the smallest singular value when
/// the matrix has rank `rank_cap` or less.
pub fn screen_lambda(y: &DMatrix<f64>, rank_cap: usize) -> Result<f64> {
    let sv = singular_values(&center_columns(y).0)?;
    if sv.is_empty() {
        return Ok(0.0);
    }
    Ok(sv[rank_cap.min(sv.len() - 1)])
}

pub fn center_columns(y: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = y.nrows() as f64;
    let means = DVector::from_iterator(y.ncols(), y.column_iter().map(|c| c.sum() / n));
    let mut yc = y.clone();
    for (j, mut col) in yc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    (yc, means)
}

/// Shared state for fitting many SNPs against one expression matrix.
///
/// With `x̃` the centred genotype, `s = ‖x̃‖²` and `v = Y_cᵀx̃`, split
/// `Y_c = A + x̃vᵀ/s` with `x̃ᵀA = 0`. Writing `β = v/s + w`, the residual is
/// `R = A − x̃wᵀ` and `RᵀR = AᵀA + s wwᵀ`. The refit gives
/// `w ← Σ (1 − λ/d_k) u_k u_kᵀ w` over the singular pairs of `R` above `λ`,
/// so after one eigendecomposition of `AᵀA` each iteration is a
/// diagonal-plus-rank-one problem handled by [`filter_rank_one`].
pub struct MarginalScreen<'a> {
    y: &'a DMatrix<f64>,
    yc: DMatrix<f64>,
    y_mean: DVector<f64>,
    yc_norm2: f64,
    side: GramSide,
    /// `Y_cᵀY_c` or `Y_cY_cᵀ`, whichever is smaller.
    gram0: DMatrix<f64>,
    opts: MarginalOptions,
}

struct Outcome {
    beta: DVector<f64>,
    mu: DVector<f64>,
    low_rank: Option<DMatrix<f64>>,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
}

/// Orthonormal `q × r` basis of the row space of `A` and the matching
/// squared singular values, ascending.
struct Spectrum {
    theta: Vec<f64>,
    basis: DMatrix<f64>,
}

impl<'a> MarginalScreen<'a> {
    pub fn new(y: &'a DMatrix<f64>, opts: MarginalOptions) -> Result<Self> {
        if !(opts.lambda >= 0.0) || !opts.lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lambda must be finite and non-negative, got {}",
                opts.lambda
            )));
        }
        if y.nrows() < 3 {
            return Err(Error::InvalidParameter(format!(
                "need at least 3 samples, got {}",
                y.nrows()
            )));
        }
        if y.ncols() == 0 {
            return Err(Error::InvalidParameter("expression matrix has no probes".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let (yc, y_mean) = center_columns(y);
        let side = GramSide::smaller(y.nrows(), y.ncols());
        let gram0 = match side {
            GramSide::Columns => yc.tr_mul(&yc),
            GramSide::Rows => &yc * yc.transpose(),
        };
        Ok(Self {
            y,
            yc_norm2: yc.norm_squared(),
            yc,
            y_mean,
            side,
            gram0,
            opts,
        })
    }

    pub fn options(&self) -> MarginalOptions {
        self.opts
    }

    pub fn fit(&self, x: &DVector<f64>) -> Result<SnpFit> {
        let o = self.run(x, true)?;
        Ok(SnpFit {
            beta: o.beta,
            mu: o.mu,
            low_rank: o.low_rank.unwrap_or_default(),
            trace: o.trace,
            iterations: o.iterations,
            converged: o.converged,
        })
    }

    fn spectrum(&self, xt: &DVector<f64>, v: &DVector<f64>, ss: f64) -> Spectrum {
        let (gram, rows) = match self.side {
            GramSide::Columns => {
                let mut g = self.gram0.clone();
                g.ger(-1.0 / ss, v, v, 1.0);
                (g, false)
            }
            GramSide::Rows => {
                // P⊥ (Y_c Y_cᵀ) P⊥ with P⊥ = I − x̂x̂ᵀ.
                let xh = xt / ss.sqrt();
                let h = &self.gram0 * &xh;
                let c = xh.dot(&h);
                let mut g = self.gram0.clone();
                g.ger(-1.0, &xh, &h, 1.0);
                g.ger(-1.0, &h, &xh, 1.0);
                g.ger(c, &xh, &xh, 1.0);
                (g, true)
            }
        };
        let dim = gram.nrows();
        let eig = SymmetricEigen::new(gram);
        let top = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
        let floor = 64.0 * f64::EPSILON * dim as f64 * top;
        let mut keep: Vec<usize> = (0..dim).filter(|&k| eig.eigenvalues[k] > floor).collect();
        keep.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let theta: Vec<f64> = keep.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vecs = eig.eigenvectors.select_columns(&keep);
        let basis = if rows {
            // Row-space basis Aᵀp / √θ with Aᵀ = Y_cᵀ − (v/√s) x̂ᵀ.
            let xh = xt / ss.sqrt();
            let mut b = self.yc.tr_mul(&vecs);
            let proj = vecs.tr_mul(&xh);
            b.ger(-1.0 / ss.sqrt(), v, &proj, 1.0);
            for (c, t) in theta.iter().enumerate() {
                b.column_mut(c).scale_mut(1.0 / t.sqrt());
            }
            b
        } else {
            vecs
        };
        Spectrum { theta, basis }
    }

    fn run(&self, x: &DVector<f64>, want_low_rank: bool) -> Result<Outcome> {
        let (n, q) = self.y.shape();
        if x.len() != n {
            return Err(Error::Shape(format!(
                "genotype vector has {} entries, expression has {} samples",
                x.len(),
                n
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let x_mean = x.mean();
        let xt = x.add_scalar(-x_mean);
        let scale = x.amax().max(1.0);
        if xt.amax() <= 1e-12 * scale {
            return Err(Error::DegenerateDesign("genotype column is constant".into()));
        }
        let ss = xt.norm_squared();
        let v = self.yc.tr_mul(&xt);
        let ols = &v / ss;
        let lambda = self.opts.lambda;

        // Coordinates of w: one weight on the unit direction of its part
        // orthogonal to the basis (a zero pole), then one per basis vector.
        let spec = self.spectrum(&xt, &v, ss);
        let w0 = -&ols;
        let a0 = spec.basis.tr_mul(&w0);
        let perp = &w0 - &spec.basis * &a0;
        let perp_norm = perp.norm();
        let mut poles = Vec::with_capacity(spec.theta.len() + 1);
        poles.push(0.0);
        poles.extend_from_slice(&spec.theta);
        let mut z = Vec::with_capacity(poles.len());
        z.push(perp_norm);
        z.extend(a0.iter().copied());
        let a_norm2 = (self.yc_norm2 - v.norm_squared() / ss).max(0.0);

        let mut trace = vec![0.5 * self.yc_norm2];
        let mut z_prev = z.clone();
        let mut converged = false;
        let mut iterations = 0;
        for iter in 0..self.opts.max_iter {
            iterations = iter + 1;
            let step = filter_rank_one(&poles, &z, ss, lambda * lambda, |e| 1.0 - lambda / e.sqrt());
            let mut kept = 0.0;
            let mut nuclear = 0.0;
            for &e in &step.eigenvalues {
                kept += e - lambda * lambda;
                nuclear += e.sqrt() - lambda;
            }
            let z2: f64 = z.iter().map(|t| t * t).sum();
            let dz2: f64 = step.z.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum();
            // ½‖R − L‖² + λ‖L‖_*, less the decrease from the refit of β.
            let f = 0.5 * (a_norm2 + ss * z2 - kept) - 0.5 * ss * dz2 + lambda * nuclear;
            let f = f.max(0.0);
            let prev = *trace.last().unwrap();
            trace.push(f);
            z_prev = std::mem::replace(&mut z, step.z);
            if (prev - f).abs() <= self.opts.tol * prev.abs().max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }

        let to_beta = |z: &[f64]| -> DVector<f64> {
            let a = DVector::from_column_slice(&z[1..]);
            let mut b = &ols + &spec.basis * a;
            if perp_norm > 0.0 {
                b.axpy(z[0] / perp_norm, &perp, 1.0);
            }
            b
        };
        let beta = to_beta(&z);
        let mu = DVector::from_fn(q, |j, _| self.y_mean[j] - x_mean * beta[j]);
        let low_rank = if want_low_rank {
            let mut r = self.yc.clone();
            r.ger(-1.0, &xt, &to_beta(&z_prev), 1.0);
            Some(Shrinker.shrink(&r, lambda)?.low_rank)
        } else {
            None
        };
        Ok(Outcome {
            beta,
            mu,
            low_rank,
            trace,
            iterations,
            converged,
        })
    }
}

pub fn fit_one_snp(
    y: &DMatrix<f64>,
    x: &DVector<f64>,
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SnpFit> {
    MarginalScreen::new(
        y,
        MarginalOptions {
            lambda,
            tol,
            max_iter,
        },
    )?
    .fit(x)
}

/// Fits every SNP independently. SNPs are processed in parallel on the
/// current rayon pool; results do not depend on the schedule.
pub fn fit_all_snps(
    y: &ExpressionMatrix,
    x: &GenotypeMatrix,
    opts: MarginalOptions,
) -> Result<MarginalFit> {
    if y.sample_ids != x.sample_ids {
        return Err(Error::Shape(
            "genotype and expression sample ids differ or are ordered differently".into(),
        ));
    }
    let screen = MarginalScreen::new(&y.values, opts)?;
    let q = y.n_probes();
    let p = x.n_snps();

    let fits: Vec<Result<Option<Outcome>>> = (0..p)
        .into_par_iter()
        .map(|i| {
            let col: DVector<f64> = x.values.column(i).into_owned();
            match screen.run(&col, false) {
                Ok(o) => Ok(Some(o)),
                Err(Error::DegenerateDesign(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();

    let mut beta = DMatrix::zeros(p, q);
    let mut mu = DMatrix::zeros(p, q);
    let mut iterations = vec![0; p];
    let mut converged = vec![false; p];
    let mut degenerate = vec![false; p];
    for (i, fit) in fits.into_iter().enumerate() {
        match fit? {
            Some(o) => {
                beta.row_mut(i).copy_from(&o.beta.transpose());
                mu.row_mut(i).copy_from(&o.mu.transpose());
                iterations[i] = o.iterations;
                converged[i] = o.converged;
            }
            None => degenerate[i] = true,
        }
    }
    Ok(MarginalFit {
        beta_hat: CoefficientMatrix {
            values: beta,
            row_ids: x.snp_ids.clone(),
            col_ids: y.probe_ids.clone(),
        },
        mu_hat: mu,
        lambda: opts.lambda,
        iterations_per_snp: iterations,
        converged,
        degenerate,
    })
}
