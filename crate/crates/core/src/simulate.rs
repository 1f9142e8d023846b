//! Synthetic expression with planted SNP effects and hidden confounders:
//! `Y = X B + U + e`, where the columns of `U` are drawn from
//! `N(0, scale · H Hᵀ)` for a Gaussian `n × k` factor `H`.
//!
//! Draw order from a single ChaCha8 stream, fixed for reproducibility:
//! active SNP indices, then the gene set of each active SNP in that order,
//! then `H` (column-major), then one `k`-vector per hidden column, then the
//! noise matrix (column-major).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix_io::{CoefficientMatrix, ExpressionMatrix, GenotypeMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_active_snps: usize,
    pub genes_per_snp: usize,
    pub beta: f64,
    pub k_hidden: usize,
    pub hidden_scale: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_active_snps: 20,
            genes_per_snp: 10,
            beta: 2.0,
            k_hidden: 10,
            hidden_scale: 0.1,
            noise_sd: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub b_true: CoefficientMatrix,
    /// In draw order.
    pub active_snp_ids: Vec<String>,
    /// Affected probes per active SNP, sorted.
    pub influenced_genes: BTreeMap<String, Vec<String>>,
}

impl GroundTruth {
    /// Rebuilds the truth from a saved coefficient matrix; active SNPs are
    /// the non-zero rows, in row order.
    pub fn from_coefficients(b_true: CoefficientMatrix) -> Self {
        let mut active_snp_ids = Vec::new();
        let mut influenced_genes = BTreeMap::new();
        for (i, row) in b_true.values.row_iter().enumerate() {
            let genes: Vec<String> = row
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(j, _)| b_true.col_ids[j].clone())
                .collect();
            if !genes.is_empty() {
                active_snp_ids.push(b_true.row_ids[i].clone());
                influenced_genes.insert(b_true.row_ids[i].clone(), genes);
            }
        }
        Self {
            b_true,
            active_snp_ids,
            influenced_genes,
        }
    }

    pub fn is_active(&self, snp_id: &str) -> bool {
        self.influenced_genes.contains_key(snp_id)
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub expression: ExpressionMatrix,
    pub truth: GroundTruth,
    /// `U`, the confounder matrix added to `XB`.
    pub hidden: DMatrix<f64>,
    /// `H`, the `n × k` factor behind the column covariance of `U`.
    pub factor: DMatrix<f64>,
}

/// Zero-padded ids `prefix1 .. prefixN`, so that lexicographic and numeric
/// order agree.
pub fn numbered_ids(prefix: &str, count: usize) -> Vec<String> {
    let width = count.max(1).to_string().len();
    (1..=count).map(|i| format!("{prefix}{i:0width$}")).collect()
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    DMatrix::from_vec(rows, cols, data)
}

/// One draw from `N(0, scale · F Fᵀ)` as `√scale · F g` with `g ~ N(0, I)`.
/// Works for rank-deficient covariances without a Cholesky factor.
pub fn sample_mvn_column<R: Rng + ?Sized>(factor: &DMatrix<f64>, scale: f64, rng: &mut R) -> DVector<f64> {
    let g = DVector::from_fn(factor.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
    if scale == 0.0 {
        return DVector::zeros(factor.nrows());
    }
    factor * g * scale.sqrt()
}

pub fn simulate(x: &GenotypeMatrix, q: usize, config: &SimConfig) -> Result<Simulation> {
    let (n, p) = x.values.shape();
    let c = config;
    if c.n_active_snps == 0 || c.genes_per_snp == 0 || c.k_hidden == 0 {
        return Err(Error::InvalidParameter("simulation counts must be positive".into()));
    }
    if q < c.genes_per_snp {
        return Err(Error::InvalidParameter(format!(
            "genes_per_snp {} exceeds the number of genes {q}",
            c.genes_per_snp
        )));
    }
    if p < c.n_active_snps {
        return Err(Error::InvalidParameter(format!(
            "{} active SNPs requested from {p}",
            c.n_active_snps
        )));
    }
    if !(c.hidden_scale >= 0.0 && c.noise_sd >= 0.0 && c.beta.is_finite()) {
        return Err(Error::InvalidParameter("scales must be non-negative".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let probe_ids = numbered_ids("gene", q);

    let active = index::sample(&mut rng, p, c.n_active_snps).into_vec();
    let mut b = DMatrix::zeros(p, q);
    let mut influenced = BTreeMap::new();
    for &i in &active {
        let mut genes = index::sample(&mut rng, q, c.genes_per_snp).into_vec();
        genes.sort_unstable();
        for &j in &genes {
            b[(i, j)] = c.beta;
        }
        influenced.insert(
            x.snp_ids[i].clone(),
            genes.iter().map(|&j| probe_ids[j].clone()).collect(),
        );
    }

    let h = normal_matrix(&mut rng, n, c.k_hidden);
    let mut u = DMatrix::zeros(n, q);
    for j in 0..q {
        u.set_column(j, &sample_mvn_column(&h, c.hidden_scale, &mut rng));
    }
    let e = normal_matrix(&mut rng, n, q) * c.noise_sd;
    let y = &x.values * &b + &u + e;

    Ok(Simulation {
        expression: ExpressionMatrix::new(y, probe_ids.clone(), x.sample_ids.clone())?,
        truth: GroundTruth {
            b_true: CoefficientMatrix::new(b, x.snp_ids.clone(), probe_ids)?,
            active_snp_ids: active.iter().map(|&i| x.snp_ids[i].clone()).collect(),
            influenced_genes: influenced,
        },
        hidden: u,
        factor: h,
    })
}

/// Independent-locus genotypes: each SNP draws a minor-allele frequency
/// from U(0.05, 0.5) and codes Binomial(2, maf) per sample. Constant
/// columns are redrawn.
pub fn synthetic_genotypes(n: usize, p: usize, seed: u64) -> Result<GenotypeMatrix> {
    if n < 2 || p == 0 {
        return Err(Error::InvalidParameter(
            "synthetic genotypes need at least 2 samples and 1 SNP".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = DMatrix::zeros(n, p);
    for k in 0..p {
        let maf: f64 = rng.random_range(0.05..0.5);
        loop {
            for i in 0..n {
                let a = (rng.random::<f64>() < maf) as u8 + (rng.random::<f64>() < maf) as u8;
                values[(i, k)] = f64::from(a);
            }
            let col = values.column(k);
            if col.iter().any(|v| *v != col[0]) {
                break;
            }
        }
    }
    GenotypeMatrix::new(values, numbered_ids("rs", p), numbered_ids("s", n))
}
