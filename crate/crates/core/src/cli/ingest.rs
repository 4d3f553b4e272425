//! CSV readers for data, covariance, loading and structure files.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{HierarchyTree, SampleCov};
use crate::simlab::covariance_of_rows;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    /// Observations by items.
    Raw,
    /// A symmetric covariance matrix; requires `--n`.
    Cov,
}

fn records(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(out.len() + 1);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        out.push((line, rec.iter().map(str::to_owned).collect()));
    }
    Ok(out)
}

/// Reads a numeric CSV table. A first line with no numeric cells is taken
/// as a header. Rows and columns in errors are 1-based file positions.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut recs = records(path)?;
    if let Some((_, first)) = recs.first() {
        if first.iter().all(|c| c.parse::<f64>().is_err()) {
            recs.remove(0);
        }
    }
    let Some((_, first)) = recs.first() else {
        return Err(Error::InvalidArgument(format!("{} contains no data rows", path.display())));
    };
    let cols = first.len();
    let mut data = Vec::with_capacity(recs.len() * cols);
    for (line, rec) in &recs {
        if rec.len() != cols {
            return Err(Error::DimensionMismatch {
                what: "cells per row",
                expected: cols,
                actual: rec.len(),
            });
        }
        for (c, cell) in rec.iter().enumerate() {
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => data.push(v),
                _ => {
                    return Err(Error::NonNumericCell {
                        row: *line,
                        column: c + 1,
                        value: cell.clone(),
                    })
                }
            }
        }
    }
    Ok(DMatrix::from_row_slice(recs.len(), cols, &data))
}

/// Loads a sample covariance from raw observations or a covariance matrix.
///
/// Raw data are centered at the sample mean; `n` defaults to the row count.
pub fn ingest(path: &Path, kind: InputKind, n: Option<usize>) -> Result<SampleCov> {
    let m = read_matrix(path)?;
    match kind {
        InputKind::Raw => {
            let rows = m.nrows();
            SampleCov::new(covariance_of_rows(&m), n.unwrap_or(rows))
        }
        InputKind::Cov => {
            let n = n.ok_or(Error::MissingN)?;
            if m.nrows() != m.ncols() {
                return Err(Error::DimensionMismatch {
                    what: "covariance columns",
                    expected: m.nrows(),
                    actual: m.ncols(),
                });
            }
            SampleCov::new(m, n)
        }
    }
}

/// Reads `item,group` lines (1-based items; group 0 leaves an item out)
/// into per-group item lists (0-based items).
pub fn read_structure(path: &Path, n_items: usize, n_groups: usize) -> Result<Vec<Vec<usize>>> {
    let mut groups = vec![Vec::new(); n_groups];
    let mut seen = vec![false; n_items];
    for (line, rec) in records(path)? {
        let parse = |c: usize| -> Result<Option<usize>> {
            let cell = rec.get(c).map(String::as_str).unwrap_or("");
            match cell.parse::<usize>() {
                Ok(v) => Ok(Some(v)),
                Err(_) if line == 1 => Ok(None),
                Err(_) => Err(Error::NonNumericCell {
                    row: line,
                    column: c + 1,
                    value: cell.to_owned(),
                }),
            }
        };
        let (Some(item), Some(group)) = (parse(0)?, parse(1)?) else {
            continue; // header
        };
        if item == 0 || item > n_items || group > n_groups {
            return Err(Error::InvalidArgument(format!("line {line}: item {item}, group {group} out of range")));
        }
        if std::mem::replace(&mut seen[item - 1], true) {
            return Err(Error::InvalidArgument(format!("line {line}: item {item} listed twice")));
        }
        if group > 0 {
            groups[group - 1].push(item - 1);
        }
    }
    Ok(groups)
}

/// Parses `child parent` lines (whitespace or comma separated, root as
/// `1 0`) into a tree.
pub fn parse_hierarchy(text: &str) -> Result<HierarchyTree> {
    let mut edges = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let nums: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
        let parsed: Vec<usize> = nums.iter().filter_map(|s| s.parse().ok()).collect();
        if nums.len() != 2 || parsed.len() != 2 {
            return Err(Error::MalformedTree(format!("line {}: expected `child parent`, got {line:?}", n + 1)));
        }
        edges.push((parsed[0], parsed[1]));
    }
    HierarchyTree::from_edges(&edges)
}

pub fn read_hierarchy(path: &Path) -> Result<HierarchyTree> {
    parse_hierarchy(&std::fs::read_to_string(path)?)
}
