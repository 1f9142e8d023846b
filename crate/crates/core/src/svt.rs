//! Singular value decomposition and singular-value soft-thresholding,
//! `S_λ(W) = U diag((d_i − λ)₊) Vᵀ`, the proximal operator of `λ‖·‖_*`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Singular values below this fraction of the largest are treated as zero.
pub const RANK_TOL: f64 = 1e-12;

/// Thin SVD truncated to numerical rank: `W = U diag(d) Vᵀ`, `d` descending.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: DMatrix<f64>,
    pub d: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.d.len()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (k, dk) in self.d.iter().enumerate() {
            us.column_mut(k).scale_mut(*dk);
        }
        us * self.v.transpose()
    }
}

pub fn svd(w: &DMatrix<f64>) -> Result<SvdFactors> {
    let (n, q) = w.shape();
    let dec = decompose(w, true)?;
    let keep = numerical_rank_order(&dec.sv);
    let (u, v) = match (dec.u, dec.v) {
        (Some(u), Some(v)) => (u, v),
        _ => (DMatrix::zeros(n, 0), DMatrix::zeros(q, 0)),
    };
    Ok(SvdFactors {
        u: u.select_columns(&keep),
        d: DVector::from_iterator(keep.len(), keep.iter().map(|&i| dec.sv[i])),
        v: v.select_columns(&keep),
    })
}

/// Indices of singular values above `RANK_TOL · d_max`, largest first.
fn numerical_rank_order(sv: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));
    let d1 = order.first().map_or(0.0, |&i| sv[i]);
    order.retain(|&i| sv[i] > RANK_TOL * d1 && sv[i] > 0.0);
    order
}

struct Decomposition {
    u: Option<DMatrix<f64>>,
    sv: Vec<f64>,
    v: Option<DMatrix<f64>>,
}

fn decompose(w: &DMatrix<f64>, vectors: bool) -> Result<Decomposition> {
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    let (n, q) = w.shape();
    if n == 0 || q == 0 {
        return Ok(Decomposition { u: None, sv: Vec::new(), v: None });
    }
    if n >= q {
        jacobi_svd(w, vectors)
    } else {
        let t = jacobi_svd(&w.transpose(), vectors)?;
        Ok(Decomposition { u: t.v, sv: t.sv, v: t.u })
    }
}

/// One-sided Jacobi SVD of a tall matrix (`n ≥ q`), unsorted. A Householder
/// QR reduces the work to the `q × q` factor, and sweeping over the columns
/// of `Rᵀ` rather than `R` converges in fewer sweeps. Unlike bidiagonal QR
/// iteration, small singular values stay accurate to working precision
/// relative to `‖W‖`, which nuclear norms of nearly rank-deficient matrices
/// depend on.
fn jacobi_svd(w: &DMatrix<f64>, vectors: bool) -> Result<Decomposition> {
    const MAX_SWEEPS: usize = 80;
    let q = w.ncols();
    // Unit max-entry scaling keeps the squared column norms in range.
    let scale = w.amax();
    if scale == 0.0 {
        let (u, v) = if vectors { (Some(DMatrix::zeros(w.nrows(), q)), Some(DMatrix::identity(q, q))) } else { (None, None) };
        return Ok(Decomposition { u, sv: vec![0.0; q], v });
    }
    // Columns sorted by decreasing norm before the QR make R closer to
    // diagonal.
    let mut perm: Vec<usize> = (0..q).collect();
    let col_norms: Vec<f64> = w.column_iter().map(|c| c.norm_squared()).collect();
    perm.sort_by(|&i, &j| col_norms[j].total_cmp(&col_norms[i]).then(i.cmp(&j)));
    // W·P = Q₁R₁ and R₁ᵀ = Q₂R₂, so W·P = Q₁ R₂ᵀ Q₂ᵀ. Sweeping the columns
    // of the lower-triangular R₂ᵀ converges in fewer sweeps than R₁.
    let qr1 = (w.select_columns(&perm) / scale).qr();
    let q1 = vectors.then(|| qr1.q());
    let qr2 = qr1.r().transpose().qr();
    let q2 = vectors.then(|| qr2.q());
    let mut a = qr2.r().transpose();
    let mut acc = vectors.then(|| DMatrix::<f64>::identity(q, q));

    // Squared rotation threshold `(ε·√q)²`; inputs are scaled to unit max
    // entry so products of squared norms stay in range.
    let tol2 = f64::EPSILON * f64::EPSILON * q as f64;
    // Columns this small are zero at working precision; rotating them
    // only stirs rounding noise.
    let negligible = (f64::EPSILON * a.norm()).powi(2);
    let mut norms: Vec<f64> = vec![0.0; q];
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        for (j, c) in a.column_iter().enumerate() {
            norms[j] = c.norm_squared();
        }
        let mut rotated = false;
        for p in 0..q {
            for r in p + 1..q {
                let (alpha, beta) = (norms[p], norms[r]);
                if alpha.min(beta) <= negligible {
                    continue;
                }
                let gamma = column_dot(&a, p, r);
                if gamma * gamma <= tol2 * (alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta.abs() < 1e150 {
                    zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                } else {
                    0.5 / zeta
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, r, c, s);
                if let Some(m) = acc.as_mut() {
                    rotate(m, p, r, c, s);
                }
                norms[p] = (alpha - t * gamma).max(0.0);
                norms[r] = beta + t * gamma;
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SvdFailed);
    }
    // R₂ᵀ·J = Ũ Σ with J the accumulated rotations, so W·P = (Q₁Ũ) Σ (Q₂J)ᵀ
    // and V is Q₂J with its rows moved back through P.
    let sv: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();
    let (u, v) = match (q1, q2, acc) {
        (Some(q1), Some(q2), Some(j)) => {
            for (k, &d) in sv.iter().enumerate() {
                if d > 0.0 {
                    a.column_mut(k).unscale_mut(d);
                }
            }
            let vp = q2 * j;
            let mut v = DMatrix::zeros(q, q);
            for (i, &pi) in perm.iter().enumerate() {
                v.set_row(pi, &vp.row(i));
            }
            (Some(q1 * a), Some(v))
        }
        _ => (None, None),
    };
    Ok(Decomposition { u, sv: sv.into_iter().map(|d| d * scale).collect(), v })
}

fn column_dot(m: &DMatrix<f64>, p: usize, r: usize) -> f64 {
    let rows = m.nrows();
    let data = m.as_slice();
    let (xp, xr) = (&data[p * rows..(p + 1) * rows], &data[r * rows..(r + 1) * rows]);
    xp.iter().zip(xr).map(|(a, b)| a * b).sum()
}

/// Columns `p, r` ← `(c·x_p − s·x_r, s·x_p + c·x_r)`.
fn rotate(m: &mut DMatrix<f64>, p: usize, r: usize, c: f64, s: f64) {
    let rows = m.nrows();
    let data = m.as_mut_slice();
    let (head, tail) = data.split_at_mut(r * rows);
    let xp = &mut head[p * rows..(p + 1) * rows];
    let xr = &mut tail[..rows];
    for (a, b) in xp.iter_mut().zip(xr.iter_mut()) {
        let (x, y) = (*a, *b);
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

pub fn nuclear_norm(w: &DMatrix<f64>) -> Result<f64> {
    Ok(singular_values(w)?.sum())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold must be non-negative, got {lambda}"
        )));
    }
    Ok(())
}

/// `S_λ(W)`, computed from a full SVD of `W`.
pub fn soft_threshold_svd(w: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    check_lambda(lambda)?;
    let f = svd(w)?;
    let keep: Vec<usize> = (0..f.rank()).filter(|&k| f.d[k] > lambda).collect();
    let mut us = f.u.select_columns(&keep);
    for (c, &k) in keep.iter().enumerate() {
        us.column_mut(c).scale_mut(f.d[k] - lambda);
    }
    Ok(us * f.v.select_columns(&keep).transpose())
}

/// Result of shrinking a residual matrix with [`Shrinker`].
#[derive(Debug, Clone)]
pub struct Shrinkage {
    /// `S_λ(R)`.
    pub low_rank: DMatrix<f64>,
    /// `Σ (d_i − λ)₊`, the nuclear norm of `low_rank`.
    pub nuclear_norm: f64,
    pub rank: usize,
    /// Largest singular value of the input.
    pub sigma_max: f64,
}

/// Which Gram matrix a [`Shrinker`] call receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GramSide {
    /// `RᵀR` (columns × columns).
    Columns,
    /// `RRᵀ` (rows × rows).
    Rows,
}

impl GramSide {
    pub fn smaller(rows: usize, cols: usize) -> Self {
        if cols <= rows {
            GramSide::Columns
        } else {
            GramSide::Rows
        }
    }
}

/// Soft-thresholding through the eigendecomposition of the smaller Gram
/// matrix. Only the singular triplets above the threshold enter the result,
/// which makes this the workhorse of the iterative solvers.
#[derive(Debug, Clone, Copy, Default)]
pub struct Shrinker;

impl Shrinker {
    pub fn shrink(&self, r: &DMatrix<f64>, lambda: f64) -> Result<Shrinkage> {
        let side = GramSide::smaller(r.nrows(), r.ncols());
        let gram = match side {
            GramSide::Columns => r.tr_mul(r),
            GramSide::Rows => r * r.transpose(),
        };
        self.shrink_with_gram(r, gram, side, lambda)
    }

    /// Same as [`Shrinker::shrink`] with a caller-supplied Gram matrix of `r`.
    pub fn shrink_with_gram(
        &self,
        r: &DMatrix<f64>,
        gram: DMatrix<f64>,
        side: GramSide,
        lambda: f64,
    ) -> Result<Shrinkage> {
        check_lambda(lambda)?;
        if gram.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        let dim = gram.nrows();
        if dim == 0 {
            return Ok(Shrinkage {
                low_rank: DMatrix::zeros(r.nrows(), r.ncols()),
                nuclear_norm: 0.0,
                rank: 0,
                sigma_max: 0.0,
            });
        }
        let eig = SymmetricEigen::new(gram);
        let d: Vec<f64> = eig.eigenvalues.iter().map(|e| e.max(0.0).sqrt()).collect();
        let sigma_max = d.iter().copied().fold(0.0, f64::max);
        let mut keep: Vec<usize> = (0..dim)
            .filter(|&k| d[k] > lambda && d[k] > RANK_TOL * sigma_max)
            .collect();
        keep.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(a.cmp(&b)));

        let basis = eig.eigenvectors.select_columns(&keep);
        let mut scaled = basis.clone();
        for (c, &k) in keep.iter().enumerate() {
            scaled.column_mut(c).scale_mut(1.0 - lambda / d[k]);
        }
        let low_rank = match side {
            GramSide::Columns => (r * &scaled) * basis.transpose(),
            GramSide::Rows => scaled * basis.tr_mul(r),
        };
        Ok(Shrinkage {
            low_rank,
            nuclear_norm: keep.iter().map(|&k| d[k] - lambda).sum(),
            rank: keep.len(),
            sigma_max,
        })
    }
}

/// Singular values of `w` in descending order.
pub fn singular_values(w: &DMatrix<f64>) -> Result<DVector<f64>> {
    let sv = decompose(w, false)?.sv;
    let keep = numerical_rank_order(&sv);
    Ok(DVector::from_iterator(keep.len(), keep.iter().map(|&i| sv[i])))
}
