//! Plain CSV matrices: no header, one row per matrix row.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use netcarto_core::netmodel::SamplingMask;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MissingPolicy {
    /// Empty cells are an error.
    Error,
    /// Empty cells become unobserved entries.
    Mask,
}

/// Parsed matrix; `mask` is `Some` only under [`MissingPolicy::Mask`].
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedMatrix {
    pub values: DMatrix<f64>,
    pub mask: Option<SamplingMask>,
}

impl LoadedMatrix {
    /// The mask, or a full one when every cell was present.
    pub fn mask_or_full(&self) -> SamplingMask {
        self.mask.clone().unwrap_or_else(|| SamplingMask::full(self.values.nrows(), self.values.ncols()))
    }
}

pub fn parse_matrix_csv(text: &str, policy: MissingPolicy) -> Result<LoadedMatrix> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("row {}", i + 1))?;
        let row = record
            .iter()
            .enumerate()
            .map(|(j, cell)| {
                if cell.is_empty() {
                    Ok(None)
                } else {
                    cell.parse::<f64>().map(Some).with_context(|| format!("non-numeric cell {cell:?} at row {}, column {}", i + 1, j + 1))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("empty matrix file");
    }
    let cols = rows[0].len();
    if let Some(i) = rows.iter().position(|r| r.len() != cols) {
        bail!("ragged rows: row {} has {} cells, row 1 has {cols}", i + 1, rows[i].len());
    }
    let missing = rows.iter().flatten().any(Option::is_none);
    if missing && policy == MissingPolicy::Error {
        let (i, j) = rows.iter().enumerate().find_map(|(i, r)| r.iter().position(Option::is_none).map(|j| (i, j))).unwrap();
        bail!("missing value at row {}, column {} (use the mask policy to allow gaps)", i + 1, j + 1);
    }
    let values = DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j].unwrap_or(0.0));
    let mask = (policy == MissingPolicy::Mask).then(|| SamplingMask::from_fn(rows.len(), cols, |i, j| rows[i][j].is_some()));
    Ok(LoadedMatrix { values, mask })
}

pub fn load_matrix_csv(path: &Path, policy: MissingPolicy) -> Result<LoadedMatrix> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_matrix_csv(&text, policy).with_context(|| format!("parsing {}", path.display()))
}

fn format_cell(v: f64) -> String {
    // Shortest representation that round-trips.
    format!("{v:?}")
}

/// Formats a matrix; cells outside `mask` are left empty.
pub fn format_matrix_csv(m: &DMatrix<f64>, mask: Option<&SamplingMask>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let cells: Vec<String> = (0..m.ncols())
            .map(|j| if mask.is_none_or(|k| k.contains(i, j)) { format_cell(m[(i, j)]) } else { String::new() })
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>, mask: Option<&SamplingMask>) -> Result<()> {
    fs::write(path, format_matrix_csv(m, mask)).with_context(|| format!("writing {}", path.display()))
}

/// 1-indexed identifiers, one per line.
pub fn format_ids(ids: &[usize]) -> String {
    ids.iter().map(|i| format!("{}\n", i + 1)).collect()
}

/// Reads 1-indexed identifiers from a comma/newline separated list.
pub fn parse_ids(text: &str) -> Result<Vec<usize>> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            let id: usize = s.parse().with_context(|| format!("bad identifier {s:?}"))?;
            if id == 0 {
                bail!("identifiers are 1-indexed; got 0");
            }
            Ok(id - 1)
        })
        .collect()
}
