//! Standardisation of marginal effects, the per-SNP Higher-Criticism score,
//! SNP ranking and top-n screening.

use std::cmp::Ordering;
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use libm::erfc;

use crate::error::{Error, Result};
use crate::matrix_io::{create_writer, open_reader, CoefficientMatrix, GenotypeMatrix};

/// Upper tail of the standard normal, `P(N(0,1) > t)`.
pub fn normal_sf(t: f64) -> f64 {
    0.5 * erfc(t / std::f64::consts::SQRT_2)
}

/// Standardised effects `Z_ij`, one row per SNP.
#[derive(Debug, Clone)]
pub struct ZscoreMatrix {
    pub values: DMatrix<f64>,
    /// Entries whose residual variance was zero; their Z is set to 0.
    pub zero_variance: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StandardizeOptions {
    /// Centre each genotype column before forming `xᵀx`.
    pub center_x: bool,
}

impl Default for StandardizeOptions {
    fn default() -> Self {
        Self { center_x: true }
    }
}

/// `Z_ij = β̂_ij / sqrt((xᵢᵀxᵢ)⁻¹ · V̂(y_j − xᵢβ̂_ij))`, with `V̂` the sample
/// variance (divisor n − 1).
pub fn standardize(
    beta_hat: &DMatrix<f64>,
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    opts: StandardizeOptions,
) -> Result<ZscoreMatrix> {
    let (p, q) = beta_hat.shape();
    let n = y.nrows();
    if x.ncols() != p || y.ncols() != q || x.nrows() != n {
        return Err(Error::Shape(format!(
            "beta_hat {p}x{q}, genotypes {}x{}, expression {}x{}",
            x.nrows(),
            x.ncols(),
            n,
            y.ncols()
        )));
    }
    if n < 2 {
        return Err(Error::InvalidParameter("need at least 2 samples".into()));
    }
    let nf = n as f64;
    let rows: Vec<(Vec<f64>, Vec<usize>)> = (0..p)
        .into_par_iter()
        .map(|i| {
            let xi = x.column(i);
            let xm = xi.sum() / nf;
            let xtx: f64 = if opts.center_x {
                xi.iter().map(|v| (v - xm) * (v - xm)).sum()
            } else {
                xi.iter().map(|v| v * v).sum()
            };
            let mut z = vec![0.0; q];
            let mut flagged = Vec::new();
            for j in 0..q {
                let b = beta_hat[(i, j)];
                if b == 0.0 {
                    continue;
                }
                let yj = y.column(j);
                let mut mean = 0.0;
                for k in 0..n {
                    mean += yj[k] - xi[k] * b;
                }
                mean /= nf;
                let mut var = 0.0;
                for k in 0..n {
                    let e = yj[k] - xi[k] * b - mean;
                    var += e * e;
                }
                var /= nf - 1.0;
                let denom = (var / xtx).sqrt();
                if var > 0.0 && xtx > 0.0 && denom.is_finite() {
                    z[j] = b / denom;
                } else {
                    flagged.push(j);
                }
            }
            (z, flagged)
        })
        .collect();

    let mut values = DMatrix::zeros(p, q);
    let mut zero_variance = Vec::new();
    for (i, (z, flagged)) in rows.into_iter().enumerate() {
        for (j, v) in z.into_iter().enumerate() {
            values[(i, j)] = v;
        }
        zero_variance.extend(flagged.into_iter().map(|j| (i, j)));
    }
    Ok(ZscoreMatrix {
        values,
        zero_variance,
    })
}

/// Thresholds over which the HC supremum is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HcGrid {
    /// Observed `|Z|` values with `Φ̄(t) ≥ 1/q`, plus the cap itself.
    #[default]
    Restricted,
    /// Every observed `|Z|` value.
    Unrestricted,
}

impl std::str::FromStr for HcGrid {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "restricted" => Ok(HcGrid::Restricted),
            "unrestricted" => Ok(HcGrid::Unrestricted),
            _ => Err(format!("unknown HC grid `{s}` (restricted|unrestricted)")),
        }
    }
}

/// Standardised exceedance `√q (S(t)/q − Φ̄(t)) / sqrt(Φ̄(t)(1 − Φ̄(t)))`.
pub fn hc_objective(count_at_or_above: usize, q: usize, t: f64) -> f64 {
    let tail = normal_sf(t);
    let qf = q as f64;
    qf.sqrt() * (count_at_or_above as f64 / qf - tail) / (tail * (1.0 - tail)).sqrt()
}

/// The largest `t` with `Φ̄(t) ≥ 1/q`, found by bisection.
fn grid_cap(q: usize) -> f64 {
    let target = 1.0 / q as f64;
    if target >= 0.5 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if normal_sf(mid) >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Higher-Criticism score of one row of Z.
///
/// Between consecutive observed `|Z|` values `S(t)` is constant while the
/// standardised exceedance grows with `t`, so the supremum over an interval
/// of thresholds is reached at an observed value or at the interval's right
/// end. The restricted grid therefore also evaluates the cap `t*` where
/// `Φ̄(t*) = 1/q`.
pub fn hc_statistic(z_row: &[f64], grid: HcGrid) -> f64 {
    let q = z_row.len();
    assert!(q >= 1, "empty Z row");
    let mut abs: Vec<f64> = z_row.iter().map(|z| z.abs()).collect();
    abs.sort_by(|a, b| b.total_cmp(a));
    // abs is descending; S(abs[k]) counts every entry >= abs[k].
    let cap = match grid {
        HcGrid::Restricted => Some(grid_cap(q)),
        HcGrid::Unrestricted => None,
    };
    let mut best = f64::NEG_INFINITY;
    let mut k = 0;
    while k < q {
        let t = abs[k];
        let mut count = k + 1;
        while count < q && abs[count] == t {
            count += 1;
        }
        if cap.is_none_or(|c| t <= c) {
            best = best.max(hc_objective(count, q, t));
        }
        k = count;
    }
    if let Some(c) = cap {
        let count = abs.iter().take_while(|a| **a >= c).count();
        best = best.max(hc_objective(count, q, c));
    }
    best
}

/// Scores and 1-based ranks (1 = largest score). Ties go to the smaller id.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub snp_ids: Vec<String>,
    pub scores: Vec<f64>,
    pub rank: Vec<usize>,
    /// Size of the threshold grid for HC tables; 0 for baseline rankings.
    pub threshold_grid_size: usize,
}

pub type HcScoreTable = ScoreTable;

impl ScoreTable {
    pub fn from_scores(snp_ids: Vec<String>, scores: Vec<f64>, threshold_grid_size: usize) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .unwrap_or(Ordering::Equal)
                .then_with(|| snp_ids[a].cmp(&snp_ids[b]))
        });
        let mut rank = vec![0; scores.len()];
        for (r, &i) in order.iter().enumerate() {
            rank[i] = r + 1;
        }
        Self {
            snp_ids,
            scores,
            rank,
            threshold_grid_size,
        }
    }

    /// SNP ids from rank 1 downwards.
    pub fn order(&self) -> Vec<String> {
        let mut ids = vec![String::new(); self.rank.len()];
        for (i, &r) in self.rank.iter().enumerate() {
            ids[r - 1] = self.snp_ids[i].clone();
        }
        ids
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// `snp_id  hc  rank`, in rank order.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = create_writer(path)?;
        let io = |e| Error::io(path, e);
        writeln!(out, "snp_id\thc\trank").map_err(io)?;
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by_key(|&i| self.rank[i]);
        for i in idx {
            writeln!(
                out,
                "{}\t{}\t{}",
                self.snp_ids[i],
                crate::matrix_io::format_value(self.scores[i]),
                self.rank[i]
            )
            .map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut ids = Vec::new();
        let mut scores = Vec::new();
        for (lineno, line) in open_reader(path)?.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() < 2 {
                return Err(Error::DimensionMismatch {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    expected: 3,
                    found: f.len(),
                });
            }
            let s = f[1].parse::<f64>().map_err(|_| Error::NonNumeric {
                path: path.to_path_buf(),
                row: lineno,
                col: 2,
                value: f[1].to_string(),
            })?;
            ids.push(f[0].to_string());
            scores.push(s);
        }
        if ids.is_empty() {
            return Err(Error::EmptyInput {
                path: path.to_path_buf(),
            });
        }
        Ok(Self::from_scores(ids, scores, 0))
    }
}

/// HC score for every row of Z. Rows are evaluated in parallel.
pub fn hc_rank_all(z: &ZscoreMatrix, snp_ids: &[String], grid: HcGrid) -> Result<HcScoreTable> {
    let (p, q) = z.values.shape();
    if snp_ids.len() != p {
        return Err(Error::Shape(format!("{} ids for {} Z rows", snp_ids.len(), p)));
    }
    if q < 2 {
        return Err(Error::InvalidParameter("HC needs at least 2 genes".into()));
    }
    let scores: Vec<f64> = (0..p)
        .into_par_iter()
        .map(|i| {
            let row: Vec<f64> = z.values.row(i).iter().copied().collect();
            hc_statistic(&row, grid)
        })
        .collect();
    Ok(ScoreTable::from_scores(snp_ids.to_vec(), scores, q))
}

#[derive(Debug, Clone)]
pub struct ScreenResult {
    pub kept_snp_ids: Vec<String>,
    pub x_reduced: GenotypeMatrix,
}

pub fn screen_top_n(table: &ScoreTable, x: &GenotypeMatrix, n_keep: usize) -> Result<ScreenResult> {
    if n_keep == 0 {
        return Err(Error::InvalidParameter("n_keep must be at least 1".into()));
    }
    let mut kept = table.order();
    kept.truncate(n_keep);
    let x_reduced = x.select_snps(&kept)?;
    Ok(ScreenResult {
        kept_snp_ids: kept,
        x_reduced,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMethod {
    /// Signed row mean of β̂.
    RowMeans,
    /// Row mean of |β̂|.
    RowMeansAbs,
    /// Row maximum of |β̂|.
    ExtremeVal,
}

pub fn baseline_rank(beta_hat: &CoefficientMatrix, method: BaselineMethod) -> Result<ScoreTable> {
    let b = &beta_hat.values;
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let q = b.ncols().max(1) as f64;
    let scores = b
        .row_iter()
        .map(|r| match method {
            BaselineMethod::RowMeans => r.sum() / q,
            BaselineMethod::RowMeansAbs => r.iter().map(|v| v.abs()).sum::<f64>() / q,
            BaselineMethod::ExtremeVal => r.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        })
        .collect();
    Ok(ScoreTable::from_scores(beta_hat.row_ids.clone(), scores, 0))
}

/// Convenience: standardise β̂ then score every SNP by HC.
pub fn hc_rank_from_beta(
    beta_hat: &CoefficientMatrix,
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    std_opts: StandardizeOptions,
    grid: HcGrid,
) -> Result<(ZscoreMatrix, ScoreTable)> {
    let z = standardize(&beta_hat.values, y, x, std_opts)?;
    let table = hc_rank_all(&z, &beta_hat.row_ids, grid)?;
    Ok((z, table))
}
