//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use hc_eqtl::hc::normal_sf;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn genotype_column(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    loop {
        let x = DVector::from_fn(n, |_, _| rng.random_range(0..3) as f64);
        if x.iter().any(|v| *v != x[0]) {
            return x;
        }
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix: eigenvalues
/// (unsorted) and eigenvectors as columns.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut a = a.clone();
    let mut v = DMatrix::identity(n, n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off <= 1e-30 * a.norm_squared().max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[(i, i)]).collect(), v)
}

/// Singular-value soft-threshold from the Jacobi eigendecomposition of `WᵀW`.
pub fn svt_oracle(w: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let (vals, vecs) = jacobi_eigen(&w.tr_mul(w));
    let mut out = DMatrix::zeros(w.nrows(), w.ncols());
    for (k, &e) in vals.iter().enumerate() {
        let d = e.max(0.0).sqrt();
        if d > lambda && d > 1e-12 {
            let v = vecs.column(k);
            let u = w * v / d;
            out += (u * v.transpose()) * (d - lambda);
        }
    }
    out
}

pub fn nuclear_norm_oracle(w: &DMatrix<f64>) -> f64 {
    let (vals, _) = jacobi_eigen(&w.tr_mul(w));
    vals.iter().map(|e| e.max(0.0).sqrt()).sum()
}

/// `√q (S(t)/q − Φ̄(t)) / sqrt(Φ̄(t)(1 − Φ̄(t)))` evaluated directly.
pub fn hc_display(z: &[f64], t: f64) -> f64 {
    let q = z.len() as f64;
    let s = z.iter().filter(|v| v.abs() >= t).count() as f64;
    let tail = normal_sf(t);
    q.sqrt() * (s / q - tail) / (tail * (1.0 - tail)).sqrt()
}

/// Supremum of the display over the lattice `{k/m}` with `m = 1/step` up to
/// `max|z|`, optionally restricted to `Φ̄(t) ≥ 1/q` together with the boundary point.
pub fn hc_bruteforce(z: &[f64], step: f64, restricted: bool) -> f64 {
    let top = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let q = z.len() as f64;
    let allowed = |t: f64| !restricted || normal_sf(t) >= 1.0 / q;
    let mut best = f64::NEG_INFINITY;
    // k / m rounds exactly like a z value stored as round(z·m) / m.
    let m = (1.0 / step).round();
    let steps = (top * m).round() as usize;
    for k in 0..=steps {
        let t = k as f64 / m;
        if allowed(t) {
            best = best.max(hc_display(z, t));
        }
    }
    if restricted {
        // Largest t with Φ̄(t) ≥ 1/q, by bisection.
        let (mut lo, mut hi) = (0.0f64, 40.0f64);
        if 1.0 / q < 0.5 {
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if normal_sf(mid) >= 1.0 / q {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            best = best.max(hc_display(z, lo));
        }
    }
    best
}

/// `‖y − Xb‖² + ρ‖b‖₁`.
pub fn lasso_objective(y: &DVector<f64>, x: &DMatrix<f64>, b: &DVector<f64>, rho: f64) -> f64 {
    (y - x * b).norm_squared() + rho * b.iter().map(|v| v.abs()).sum::<f64>()
}

/// Largest violation of the stationarity conditions of `‖y − Xb‖² + ρ‖b‖₁`:
/// `2x_kᵀr = ρ·sign(b_k)` when `b_k ≠ 0`, `|2x_kᵀr| ≤ ρ` otherwise.
pub fn lasso_kkt_violation(y: &DVector<f64>, x: &DMatrix<f64>, b: &DVector<f64>, rho: f64) -> f64 {
    let r = y - x * b;
    let mut worst = 0.0f64;
    for k in 0..x.ncols() {
        let g = 2.0 * x.column(k).dot(&r);
        let v = if b[k] != 0.0 {
            (g - rho * b[k].signum()).abs()
        } else {
            (g.abs() - rho).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

/// `‖Y − XB − 1μ − L‖² + ρ‖B‖₁ + λ‖L‖_*`.
pub fn lors_objective(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    b: &DMatrix<f64>,
    mu: &DVector<f64>,
    l: &DMatrix<f64>,
    rho: f64,
    lambda: f64,
) -> f64 {
    let mut r = y - x * b - l;
    for (j, mut c) in r.column_iter_mut().enumerate() {
        c.add_scalar_mut(-mu[j]);
    }
    r.norm_squared() + rho * b.iter().map(|v| v.abs()).sum::<f64>() + lambda * nuclear_norm_oracle(l)
}

/// `½‖Y − xβᵀ − 1μᵀ − L‖² + λ‖L‖_*` for one SNP.
pub fn marginal_objective(
    y: &DMatrix<f64>,
    x: &DVector<f64>,
    beta: &DVector<f64>,
    mu: &DVector<f64>,
    l: &DMatrix<f64>,
    lambda: f64,
) -> f64 {
    let r = DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| y[(i, j)] - x[i] * beta[j] - mu[j] - l[(i, j)]);
    0.5 * r.norm_squared() + lambda * nuclear_norm_oracle(l)
}

/// Slope of the simple regression of each column of `y` on `x`.
pub fn ols_slopes(y: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let xm = x.mean();
    let sxx: f64 = x.iter().map(|v| (v - xm) * (v - xm)).sum();
    DVector::from_iterator(
        y.ncols(),
        y.column_iter().map(|c| {
            let cm = c.mean();
            x.iter().zip(c.iter()).map(|(a, b)| (a - xm) * (b - cm)).sum::<f64>() / sxx
        }),
    )
}

/// Fraction of the first `k` flags that are true, for every `k`.
pub fn precision_at_k_bruteforce(hits: &[bool]) -> Vec<f64> {
    (1..=hits.len())
        .map(|k| hits[..k].iter().filter(|h| **h).count() as f64 / k as f64)
        .collect()
}
