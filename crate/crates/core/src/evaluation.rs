//! Ranking and association accuracy against a planted truth, distance-based
//! call classification, hotspot detection and overlap with known pairs.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::lors::Association;
use crate::matrix_io::{create_writer, format_value, open_reader, AnnotationTable, CoefficientMatrix};
use crate::simulate::GroundTruth;

pub const CIS_MAX_BP: u64 = 250_000;
pub const TRANS_MIN_BP: u64 = 5_000_000;
pub const DEFAULT_HOTSPOT_FRACTION: f64 = 0.0021;

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub recall_points: Vec<f64>,
    pub precision_means: Vec<f64>,
    pub n_replicates: usize,
}

impl PrCurve {
    /// Precision at the first recall point at or above `recall`.
    pub fn precision_at(&self, recall: f64) -> Option<f64> {
        self.recall_points
            .iter()
            .position(|r| *r >= recall - 1e-12)
            .map(|i| self.precision_means[i])
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let rows = self.recall_points.iter().zip(&self.precision_means);
        write_pairs(path.as_ref(), ("recall", "precision"), rows.map(|(r, p)| (format_value(*r), *p)))
    }
}

/// Precision at recall levels `1/a, 2/a, …, 1` for the `a` active SNPs.
/// The precision at level `j/a` is `j` divided by the rank of the `j`-th
/// active SNP. Active SNPs missing from `rank_order` are placed after it.
pub fn ranking_pr_curve(rank_order: &[String], truth: &GroundTruth) -> Result<PrCurve> {
    let a = truth.influenced_genes.len();
    if a == 0 {
        return Err(Error::InvalidParameter("truth has no active SNPs".into()));
    }
    let mut positions: Vec<usize> = rank_order
        .iter()
        .enumerate()
        .filter(|(_, id)| truth.is_active(id))
        .map(|(i, _)| i + 1)
        .collect();
    let missing = a - positions.len();
    positions.extend((1..=missing).map(|k| rank_order.len() + k));
    Ok(PrCurve {
        recall_points: (1..=a).map(|j| j as f64 / a as f64).collect(),
        precision_means: positions
            .iter()
            .enumerate()
            .map(|(j, &pos)| (j + 1) as f64 / pos as f64)
            .collect(),
        n_replicates: 1,
    })
}

/// Pointwise arithmetic mean of curves sharing the same recall points.
pub fn mean_pr_curve(curves: &[PrCurve]) -> Result<PrCurve> {
    let first = curves
        .first()
        .ok_or_else(|| Error::InvalidParameter("no curves to average".into()))?;
    if curves.iter().any(|c| c.recall_points != first.recall_points) {
        return Err(Error::InvalidParameter("curves have different recall points".into()));
    }
    let reps: usize = curves.iter().map(|c| c.n_replicates).sum();
    let means = (0..first.recall_points.len())
        .map(|i| {
            curves
                .iter()
                .map(|c| c.precision_means[i] * c.n_replicates as f64)
                .sum::<f64>()
                / reps as f64
        })
        .collect();
    Ok(PrCurve {
        recall_points: first.recall_points.clone(),
        precision_means: means,
        n_replicates: reps,
    })
}

/// `precision@k` for `k = 1..=top_k`: the share of the first `k` calls with a
/// non-zero true coefficient.
pub fn association_precision_curve(
    calls: &[Association],
    b_true: &CoefficientMatrix,
    top_k: usize,
) -> Result<Vec<f64>> {
    if top_k > calls.len() {
        return Err(Error::InvalidParameter(format!(
            "precision requested at {top_k} but only {} calls",
            calls.len()
        )));
    }
    let rows: HashMap<&str, usize> = b_true.row_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let cols: HashMap<&str, usize> = b_true.col_ids.iter().enumerate().map(|(j, s)| (s.as_str(), j)).collect();
    let hit = |a: &Association| match (rows.get(a.snp_id.as_str()), cols.get(a.probe_id.as_str())) {
        (Some(&i), Some(&j)) => b_true.values[(i, j)] != 0.0,
        _ => false,
    };
    let mut hits = 0usize;
    Ok(calls[..top_k]
        .iter()
        .enumerate()
        .map(|(k, a)| {
            hits += hit(a) as usize;
            hits as f64 / (k + 1) as f64
        })
        .collect())
}

pub fn save_precision_at_k(curve: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let rows = curve.iter().enumerate().map(|(k, p)| ((k + 1).to_string(), *p));
    write_pairs(path.as_ref(), ("k", "precision"), rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Classification {
    Cis,
    SemiCis,
    Trans,
    Unknown,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Cis => "cis",
            Self::SemiCis => "semi_cis",
            Self::Trans => "trans",
            Self::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Same-chromosome rule with strict inequalities at both thresholds.
pub fn classify_distance(distance_bp: u64) -> Classification {
    if distance_bp < CIS_MAX_BP {
        Classification::Cis
    } else if distance_bp > TRANS_MIN_BP {
        Classification::Trans
    } else {
        Classification::SemiCis
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EqtlCall {
    pub snp_id: String,
    pub probe_id: String,
    pub effect: f64,
    /// `None` when either position is unknown or the chromosomes differ.
    pub distance_bp: Option<u64>,
    pub classification: Classification,
}

/// Classifies a pair by the distance between the SNP position and the probe
/// position (taken to be the probe midpoint). Pairs on different
/// chromosomes are trans.
pub fn classify_call(snp_id: &str, probe_id: &str, effect: f64, annotations: &AnnotationTable) -> EqtlCall {
    let (distance_bp, classification) = match (annotations.get(snp_id), annotations.get(probe_id)) {
        (Some(s), Some(p)) if s.chromosome == p.chromosome => {
            let d = s.bp.abs_diff(p.bp);
            (Some(d), classify_distance(d))
        }
        (Some(_), Some(_)) => (None, Classification::Trans),
        _ => (None, Classification::Unknown),
    };
    EqtlCall {
        snp_id: snp_id.to_string(),
        probe_id: probe_id.to_string(),
        effect,
        distance_bp,
        classification,
    }
}

pub fn classify_calls(calls: &[Association], annotations: &AnnotationTable) -> Vec<EqtlCall> {
    calls
        .iter()
        .map(|a| classify_call(&a.snp_id, &a.probe_id, a.effect, annotations))
        .collect()
}

pub fn write_calls(out: &mut dyn Write, calls: &[EqtlCall]) -> std::io::Result<()> {
    writeln!(out, "snp_id\tprobe_id\teffect\tdistance_bp\tclassification")?;
    for c in calls {
        let d = c.distance_bp.map_or_else(|| "NA".to_string(), |d| d.to_string());
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            c.snp_id,
            c.probe_id,
            format_value(c.effect),
            d,
            c.classification
        )?;
    }
    Ok(())
}

pub fn save_calls(calls: &[EqtlCall], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = create_writer(path)?;
    let io = |e| Error::io(path, e);
    write_calls(&mut out, calls).map_err(io)?;
    out.flush().map_err(io)
}

/// `⌈fraction · q_total⌉`, with products within 1e-9 of an integer rounded
/// to it first.
pub fn hotspot_threshold(q_total: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidParameter(format!("hotspot fraction {fraction} not in (0, 1)")));
    }
    let x = fraction * q_total as f64;
    let r = x.round();
    let t = if (x - r).abs() < 1e-9 { r } else { x.ceil() };
    Ok(t as usize)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hotspot {
    pub snp_id: String,
    /// Distinct probes, sorted.
    pub genes: Vec<String>,
}

/// SNPs linked to at least `hotspot_threshold(q_total, fraction)` distinct
/// probes, by decreasing probe count then SNP id.
pub fn detect_hotspots(calls: &[EqtlCall], q_total: usize, fraction: f64) -> Result<Vec<Hotspot>> {
    let threshold = hotspot_threshold(q_total, fraction)?;
    let mut by_snp: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for c in calls {
        by_snp.entry(&c.snp_id).or_default().insert(&c.probe_id);
    }
    let mut hot: Vec<Hotspot> = by_snp
        .into_iter()
        .filter(|(_, g)| g.len() >= threshold)
        .map(|(s, g)| Hotspot {
            snp_id: s.to_string(),
            genes: g.into_iter().map(str::to_string).collect(),
        })
        .collect();
    hot.sort_by(|a, b| b.genes.len().cmp(&a.genes.len()).then_with(|| a.snp_id.cmp(&b.snp_id)));
    Ok(hot)
}

pub type KnownPairs = HashSet<(String, String)>;

/// Reads `snp_id  probe_or_gene_id` pairs, tab or space separated. Blank
/// lines and `#` comments are skipped, as is a leading `snp_id` header.
pub fn load_known_pairs(path: impl AsRef<Path>) -> Result<KnownPairs> {
    let path = path.as_ref();
    let mut set = HashSet::new();
    for (lineno, line) in open_reader(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() || f[0].starts_with('#') || (lineno == 0 && f[0] == "snp_id") {
            continue;
        }
        if f.len() < 2 {
            return Err(Error::DimensionMismatch {
                path: path.to_path_buf(),
                line: lineno + 1,
                expected: 2,
                found: f.len(),
            });
        }
        set.insert((f[0].to_string(), f[1].to_string()));
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Overlap {
    pub count: usize,
    /// Share of the first `k` calls found in the known set, `k = 1..`.
    pub cumulative_fraction: Vec<f64>,
}

pub fn overlap_with_known(calls: &[Association], known: &KnownPairs) -> Overlap {
    let mut count = 0usize;
    let cumulative_fraction = calls
        .iter()
        .enumerate()
        .map(|(k, a)| {
            count += known.contains(&(a.snp_id.clone(), a.probe_id.clone())) as usize;
            count as f64 / (k + 1) as f64
        })
        .collect();
    Overlap {
        count,
        cumulative_fraction,
    }
}

impl Overlap {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let rows = self.cumulative_fraction.iter().enumerate().map(|(k, f)| ((k + 1).to_string(), *f));
        write_pairs(path.as_ref(), ("rank", "overlap_fraction"), rows)
    }
}

fn write_pairs(path: &Path, header: (&str, &str), rows: impl Iterator<Item = (String, f64)>) -> Result<()> {
    let mut out = create_writer(path)?;
    let io = |e| Error::io(path, e);
    writeln!(out, "{}\t{}", header.0, header.1).map_err(io)?;
    for (a, b) in rows {
        writeln!(out, "{a}\t{}", format_value(b)).map_err(io)?;
    }
    out.flush().map_err(io)
}
