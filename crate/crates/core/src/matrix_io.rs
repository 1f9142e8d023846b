//! Tab-separated matrix and annotation files.
//!
//! Layout: the first row holds the column ids, the first column holds the row
//! ids and the top-left cell is a free-form corner label. Genotype and
//! expression files are stored samples-in-rows. A corner cell reading
//! `sample` (or `samples`) marks the transposed, feature-in-rows layout where
//! the header lists the sample ids; such files are transposed on load.
//! Coefficient files are always SNPs-in-rows, probes-in-columns.
//!
//! Files whose name ends in `.gz` are read and written gzip-compressed.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use nalgebra::DMatrix;

use crate::error::{Error, Result};

const CORNER: &str = "id";

/// A numeric matrix with row and column identifiers, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub values: DMatrix<f64>,
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    pub corner: String,
}

/// n×p SNP dosages, samples in rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GenotypeMatrix {
    pub values: DMatrix<f64>,
    pub snp_ids: Vec<String>,
    pub sample_ids: Vec<String>,
}

/// n×q expression levels, samples in rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionMatrix {
    pub values: DMatrix<f64>,
    pub probe_ids: Vec<String>,
    pub sample_ids: Vec<String>,
}

/// SNP → probe effect estimates, SNPs in rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    pub values: DMatrix<f64>,
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixKind {
    Genotype,
    Expression,
    Coefficient,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Matrix {
    Genotype(GenotypeMatrix),
    Expression(ExpressionMatrix),
    Coefficient(CoefficientMatrix),
}

fn check_unique(ids: &[String], path: &Path) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId {
                path: path.to_path_buf(),
                id: id.clone(),
            });
        }
    }
    Ok(())
}

fn check_dims(values: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if values.nrows() != rows || values.ncols() != cols {
        return Err(Error::Shape(format!(
            "values are {}x{} but ids describe {}x{}",
            values.nrows(),
            values.ncols(),
            rows,
            cols
        )));
    }
    Ok(())
}

impl GenotypeMatrix {
    pub fn new(values: DMatrix<f64>, snp_ids: Vec<String>, sample_ids: Vec<String>) -> Result<Self> {
        check_dims(&values, sample_ids.len(), snp_ids.len())?;
        check_unique(&snp_ids, Path::new("<genotypes>"))?;
        check_unique(&sample_ids, Path::new("<genotypes>"))?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            values,
            snp_ids,
            sample_ids,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_snps(&self) -> usize {
        self.values.ncols()
    }

    /// Restricts to the given SNP columns, in the given order.
    pub fn select_snps(&self, ids: &[String]) -> Result<GenotypeMatrix> {
        let index: HashMap<&str, usize> = self
            .snp_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let cols = ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::InvalidParameter(format!("unknown SNP id `{id}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GenotypeMatrix {
            values: self.values.select_columns(&cols),
            snp_ids: ids.to_vec(),
            sample_ids: self.sample_ids.clone(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (values, sample_ids, snp_ids) = sample_major(read_table(path)?);
        check_unique(&snp_ids, path)?;
        check_unique(&sample_ids, path)?;
        Ok(Self {
            values,
            snp_ids,
            sample_ids,
        })
    }
}

impl ExpressionMatrix {
    pub fn new(values: DMatrix<f64>, probe_ids: Vec<String>, sample_ids: Vec<String>) -> Result<Self> {
        check_dims(&values, sample_ids.len(), probe_ids.len())?;
        check_unique(&probe_ids, Path::new("<expression>"))?;
        check_unique(&sample_ids, Path::new("<expression>"))?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            values,
            probe_ids,
            sample_ids,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_probes(&self) -> usize {
        self.values.ncols()
    }

    /// Rows restricted to the given sample indices.
    pub fn select_samples(&self, rows: &[usize]) -> ExpressionMatrix {
        ExpressionMatrix {
            values: self.values.select_rows(rows),
            probe_ids: self.probe_ids.clone(),
            sample_ids: rows.iter().map(|&i| self.sample_ids[i].clone()).collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (values, sample_ids, probe_ids) = sample_major(read_table(path)?);
        check_unique(&probe_ids, path)?;
        check_unique(&sample_ids, path)?;
        Ok(Self {
            values,
            probe_ids,
            sample_ids,
        })
    }
}

impl GenotypeMatrix {
    pub fn select_samples(&self, rows: &[usize]) -> GenotypeMatrix {
        GenotypeMatrix {
            values: self.values.select_rows(rows),
            snp_ids: self.snp_ids.clone(),
            sample_ids: rows.iter().map(|&i| self.sample_ids[i].clone()).collect(),
        }
    }
}

impl CoefficientMatrix {
    pub fn new(values: DMatrix<f64>, row_ids: Vec<String>, col_ids: Vec<String>) -> Result<Self> {
        check_dims(&values, row_ids.len(), col_ids.len())?;
        check_unique(&row_ids, Path::new("<coefficients>"))?;
        check_unique(&col_ids, Path::new("<coefficients>"))?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            values,
            row_ids,
            col_ids,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let table = read_table(path)?;
        check_unique(&table.row_ids, path)?;
        check_unique(&table.col_ids, path)?;
        Ok(Self {
            values: table.values,
            row_ids: table.row_ids,
            col_ids: table.col_ids,
        })
    }

    pub fn nnz(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }
}

fn is_feature_major(corner: &str) -> bool {
    corner.eq_ignore_ascii_case("sample") || corner.eq_ignore_ascii_case("samples")
}

/// Returns (values n×m, sample ids, feature ids) for either on-disk orientation.
fn sample_major(table: LabeledMatrix) -> (DMatrix<f64>, Vec<String>, Vec<String>) {
    if is_feature_major(&table.corner) {
        (table.values.transpose(), table.col_ids, table.row_ids)
    } else {
        (table.values, table.row_ids, table.col_ids)
    }
}

/// Conversion to the on-disk table layout.
pub trait Tabular {
    fn to_table(&self) -> LabeledMatrix;
}

impl Tabular for GenotypeMatrix {
    fn to_table(&self) -> LabeledMatrix {
        LabeledMatrix {
            values: self.values.clone(),
            row_ids: self.sample_ids.clone(),
            col_ids: self.snp_ids.clone(),
            corner: CORNER.to_string(),
        }
    }
}

impl Tabular for ExpressionMatrix {
    fn to_table(&self) -> LabeledMatrix {
        LabeledMatrix {
            values: self.values.clone(),
            row_ids: self.sample_ids.clone(),
            col_ids: self.probe_ids.clone(),
            corner: CORNER.to_string(),
        }
    }
}

impl Tabular for CoefficientMatrix {
    fn to_table(&self) -> LabeledMatrix {
        LabeledMatrix {
            values: self.values.clone(),
            row_ids: self.row_ids.clone(),
            col_ids: self.col_ids.clone(),
            corner: CORNER.to_string(),
        }
    }
}

impl Tabular for Matrix {
    fn to_table(&self) -> LabeledMatrix {
        match self {
            Matrix::Genotype(m) => m.to_table(),
            Matrix::Expression(m) => m.to_table(),
            Matrix::Coefficient(m) => m.to_table(),
        }
    }
}

pub fn load_matrix(path: impl AsRef<Path>, kind: MatrixKind) -> Result<Matrix> {
    Ok(match kind {
        MatrixKind::Genotype => Matrix::Genotype(GenotypeMatrix::load(path)?),
        MatrixKind::Expression => Matrix::Expression(ExpressionMatrix::load(path)?),
        MatrixKind::Coefficient => Matrix::Coefficient(CoefficientMatrix::load(path)?),
    })
}

pub fn save_matrix<M: Tabular + ?Sized>(matrix: &M, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let table = matrix.to_table();
    if table.values.nrows() == 0 || table.values.ncols() == 0 {
        return Err(Error::EmptyInput {
            path: path.to_path_buf(),
        });
    }
    let mut out = create_writer(path)?;
    let io = |e| Error::io(path, e);
    write_table(&mut out, &table).map_err(io)?;
    out.flush().map_err(io)
}

fn write_table(out: &mut dyn Write, table: &LabeledMatrix) -> std::io::Result<()> {
    write!(out, "{}", table.corner)?;
    for id in &table.col_ids {
        write!(out, "\t{id}")?;
    }
    writeln!(out)?;
    for (i, id) in table.row_ids.iter().enumerate() {
        write!(out, "{id}")?;
        for j in 0..table.values.ncols() {
            write!(out, "\t{}", format_value(table.values[(i, j)]))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v:?}")
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "." | "NA" | "na" | "NaN" | "nan" | "N/A")
}

/// Reads a raw table without applying any orientation rule.
pub fn read_table(path: impl AsRef<Path>) -> Result<LabeledMatrix> {
    let path = path.as_ref();
    let reader = open_reader(path)?;
    let mut lines = reader.lines().enumerate();
    let empty = || Error::EmptyInput {
        path: path.to_path_buf(),
    };

    let header = loop {
        match lines.next() {
            Some((_, line)) => {
                let line = line.map_err(|e| Error::io(path, e))?;
                let line = line.trim_end_matches('\r');
                if !line.trim().is_empty() {
                    break line.to_string();
                }
            }
            None => return Err(empty()),
        }
    };
    let mut fields = header.split('\t');
    let corner = fields.next().unwrap_or_default().to_string();
    let col_ids: Vec<String> = fields.map(str::to_string).collect();
    let ncols = col_ids.len();
    if ncols == 0 {
        return Err(empty());
    }

    let mut row_ids = Vec::new();
    let mut data = Vec::new();
    for (lineno, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or_default();
        let cells: Vec<&str> = fields.collect();
        if cells.len() != ncols {
            return Err(Error::DimensionMismatch {
                path: path.to_path_buf(),
                line: lineno + 1,
                expected: ncols + 1,
                found: cells.len() + 1,
            });
        }
        let row = row_ids.len() + 1;
        for (j, cell) in cells.iter().enumerate() {
            let cell = cell.trim();
            if is_missing(cell) {
                return Err(Error::MissingValue {
                    path: path.to_path_buf(),
                    row,
                    col: j + 1,
                });
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => data.push(v),
                Ok(v) if v.is_nan() => {
                    return Err(Error::MissingValue {
                        path: path.to_path_buf(),
                        row,
                        col: j + 1,
                    })
                }
                _ => {
                    return Err(Error::NonNumeric {
                        path: path.to_path_buf(),
                        row,
                        col: j + 1,
                        value: cell.to_string(),
                    })
                }
            }
        }
        row_ids.push(id.to_string());
    }
    if row_ids.is_empty() {
        return Err(empty());
    }
    let values = DMatrix::from_row_slice(row_ids.len(), ncols, &data);
    Ok(LabeledMatrix {
        values,
        row_ids,
        col_ids,
        corner,
    })
}

pub(crate) fn open_reader(path: &Path) -> Result<Box<dyn BufRead>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let inner: Box<dyn Read> = if is_gz(path) {
        Box::new(MultiGzDecoder::new(file))
    } else {
        Box::new(file)
    };
    Ok(Box::new(BufReader::new(inner)))
}

pub(crate) fn create_writer(path: &Path) -> Result<Box<dyn Write>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let buffered = BufWriter::new(file);
    Ok(if is_gz(path) {
        Box::new(GzEncoder::new(buffered, Compression::default()))
    } else {
        Box::new(buffered)
    })
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

/// Chromosome and base-pair coordinate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Position {
    pub chromosome: String,
    pub bp: u64,
}

/// SNP positions and probe midpoints, keyed by id. One table may hold both.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationTable {
    pub positions: HashMap<String, Position>,
}

impl AnnotationTable {
    pub fn get(&self, id: &str) -> Option<&Position> {
        self.positions.get(id)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Adds every entry of `other`; an id present in both is an error.
    pub fn merge(&mut self, other: AnnotationTable, origin: &Path) -> Result<()> {
        for (id, pos) in other.positions {
            if self.positions.contains_key(&id) {
                return Err(Error::DuplicateId {
                    path: origin.to_path_buf(),
                    id,
                });
            }
            self.positions.insert(id, pos);
        }
        Ok(())
    }
}

/// Reads `id  chromosome  bp` rows (tab or space separated). A first line
/// whose third field is `bp`, `pos` or `position` is treated as a header.
pub fn load_annotations(path: impl AsRef<Path>) -> Result<AnnotationTable> {
    let path: PathBuf = path.as_ref().to_path_buf();
    let reader = open_reader(&path)?;
    let mut table = AnnotationTable::default();
    let mut first = true;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() < 3 {
            return Err(Error::DimensionMismatch {
                path,
                line: lineno + 1,
                expected: 3,
                found: fields.len(),
            });
        }
        if std::mem::take(&mut first)
            && ["bp", "pos", "position"]
                .iter()
                .any(|h| fields[2].eq_ignore_ascii_case(h))
        {
            continue;
        }
        let bp = fields[2]
            .parse::<u64>()
            .map_err(|_| Error::InvalidPosition {
                path: path.clone(),
                line: lineno + 1,
                value: fields[2].to_string(),
            })?;
        let id = fields[0].to_string();
        if table.positions.contains_key(&id) {
            return Err(Error::DuplicateId { path, id });
        }
        table.positions.insert(
            id,
            Position {
                chromosome: fields[1].to_string(),
                bp,
            },
        );
    }
    Ok(table)
}
