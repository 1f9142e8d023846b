//! Per-gene screening baseline: keep the top `n_keep` SNPs by `|β̂|` for
//! every gene and pass the union on to the joint fit.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix_io::{create_writer, CoefficientMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct MsScreenResult {
    /// Sorted, unique.
    pub kept_snp_ids: Vec<String>,
    pub per_gene_top: BTreeMap<String, Vec<String>>,
}

/// Ties in `|β̂|` go to the smaller SNP id.
pub fn ms_screen(beta_hat: &CoefficientMatrix, n_keep: usize) -> Result<MsScreenResult> {
    if n_keep == 0 {
        return Err(Error::InvalidParameter("n_keep must be at least 1".into()));
    }
    let ids = &beta_hat.row_ids;
    let mut per_gene_top = BTreeMap::new();
    let mut union = BTreeSet::new();
    for (j, col) in beta_hat.values.column_iter().enumerate() {
        let mut idx: Vec<usize> = (0..col.len()).collect();
        idx.sort_by(|&a, &b| col[b].abs().total_cmp(&col[a].abs()).then_with(|| ids[a].cmp(&ids[b])));
        idx.truncate(n_keep);
        let top: Vec<String> = idx.iter().map(|&i| ids[i].clone()).collect();
        union.extend(top.iter().cloned());
        per_gene_top.insert(beta_hat.col_ids[j].clone(), top);
    }
    Ok(MsScreenResult {
        kept_snp_ids: union.into_iter().collect(),
        per_gene_top,
    })
}

impl MsScreenResult {
    /// One kept SNP id per line under a `snp_id` header.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = create_writer(path)?;
        let io = |e| Error::io(path, e);
        writeln!(out, "snp_id").map_err(io)?;
        for id in &self.kept_snp_ids {
            writeln!(out, "{id}").map_err(io)?;
        }
        out.flush().map_err(io)
    }
}
