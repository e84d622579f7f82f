//! CSV interchange, preprocessing of abundance tables, and outcome / Q loading.
//!
//! Every table is a CSV file with a header row whose first column holds ids.
//! Floats are written in Rust's shortest round-trip form, so reading a file
//! back reproduces the written values bit for bit.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::IsingQ;

/// An id-labelled numeric table. Blank cells are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub id_header: String,
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    /// Dense matrix; blank cells are an input error naming the cell.
    pub fn dense(&self, path: &Path) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(self.n_rows(), self.col_ids.len());
        for (i, row) in self.rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                m[(i, j)] = v.ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    message: format!("blank value at row '{}', column '{}'", self.row_ids[i], self.col_ids[j]),
                })?;
            }
        }
        Ok(m)
    }

    /// Single numeric column by name.
    pub fn column(&self, name: &str, path: &Path) -> Result<Vec<Option<f64>>> {
        let j = self.col_ids.iter().position(|c| c == name).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            message: format!("missing column '{name}'"),
        })?;
        Ok(self.rows.iter().map(|r| r[j]).collect())
    }
}

pub fn read_table(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| parse_err(e.to_string()))?.clone();
    if headers.is_empty() {
        return Err(parse_err("empty header".into()));
    }
    let id_header = headers[0].to_string();
    let col_ids: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    check_unique(&col_ids, "column", path)?;
    let mut row_ids = Vec::new();
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        let id = record[0].to_string();
        let mut row = Vec::with_capacity(col_ids.len());
        for (j, cell) in record.iter().skip(1).enumerate() {
            let cell = cell.trim();
            if cell.is_empty() {
                row.push(None);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| {
                parse_err(format!("row {} ('{id}'), column '{}': not a number: '{cell}'", line + 2, col_ids[j]))
            })?;
            row.push(Some(v));
        }
        row_ids.push(id);
        rows.push(row);
    }
    check_unique(&row_ids, "row", path)?;
    Ok(Table {
        id_header,
        row_ids,
        col_ids,
        rows,
    })
}

fn check_unique(ids: &[String], what: &str, path: &Path) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                message: format!("duplicate {what} id '{id}'"),
            });
        }
    }
    Ok(())
}

/// Shortest representation that parses back to the same f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Writes a header and rows of pre-formatted cells.
pub fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(header).map_err(|e| csv_io(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

pub fn write_matrix(path: &Path, id_header: &str, row_ids: &[String], col_ids: &[String], m: &DMatrix<f64>) -> Result<()> {
    let header: Vec<&str> = std::iter::once(id_header).chain(col_ids.iter().map(String::as_str)).collect();
    let rows = (0..m.nrows()).map(|i| {
        std::iter::once(row_ids[i].clone())
            .chain(m.row(i).iter().map(|v| fmt_f64(*v)))
            .collect()
    });
    write_rows(path, &header, rows)
}

pub fn write_column(path: &Path, id_header: &str, name: &str, row_ids: &[String], values: &[Option<f64>]) -> Result<()> {
    let rows = row_ids.iter().zip(values).map(|(id, v)| vec![id.clone(), fmt_opt(*v)]);
    write_rows(path, &[id_header, name], rows)
}

/// Samples × features table of counts or relative abundances.
#[derive(Clone, Debug, PartialEq)]
pub struct RawAbundanceTable {
    pub sample_ids: Vec<String>,
    pub feature_ids: Vec<String>,
    pub values: DMatrix<f64>,
}

impl RawAbundanceTable {
    pub fn read(path: &Path) -> Result<Self> {
        let table = read_table(path)?;
        let values = table.dense(path)?;
        let raw = RawAbundanceTable {
            sample_ids: table.row_ids,
            feature_ids: table.col_ids,
            values,
        };
        raw.validate()?;
        Ok(raw)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.nrows() == 0 || self.values.ncols() == 0 {
            return Err(Error::input("abundance table is empty"));
        }
        for i in 0..self.values.nrows() {
            for j in 0..self.values.ncols() {
                let v = self.values[(i, j)];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::input(format!(
                        "abundance at sample '{}', feature '{}' is {v}; expected a finite nonnegative value",
                        self.sample_ids[i], self.feature_ids[j]
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub prevalence_min: f64,
    pub mean_abundance_min: f64,
    pub pseudocount_factor: f64,
    pub standardize: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            prevalence_min: 0.30,
            mean_abundance_min: 0.003,
            pseudocount_factor: 0.5,
            standardize: true,
        }
    }
}

impl PreprocessConfig {
    /// Thresholds may be 0 to disable a filter.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("prevalence_min", self.prevalence_min), ("mean_abundance_min", self.mean_abundance_min)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::input(format!("{name} must be in [0, 1), got {v}")));
            }
        }
        if !(self.pseudocount_factor > 0.0) {
            return Err(Error::input("pseudocount_factor must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DroppedFeature {
    pub feature_id: String,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct PreprocessedDesign {
    pub x: DMatrix<f64>,
    pub sample_ids: Vec<String>,
    pub feature_ids: Vec<String>,
    /// Index of each retained feature in the raw table.
    pub source_columns: Vec<usize>,
    pub dropped: Vec<DroppedFeature>,
    /// Log-scale column means and sds used for standardization.
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Renormalize, filter, replace zeros, log, and (optionally) standardize.
pub fn preprocess(raw: &RawAbundanceTable, cfg: &PreprocessConfig) -> Result<PreprocessedDesign> {
    raw.validate()?;
    cfg.validate()?;
    let (n, p) = raw.values.shape();
    let mut rel = raw.values.clone();
    for i in 0..n {
        let s = rel.row(i).sum();
        if !(s > 0.0) {
            return Err(Error::input(format!("sample '{}' has zero total abundance", raw.sample_ids[i])));
        }
        if (s - 1.0).abs() > 1e-6 {
            rel.row_mut(i).scale_mut(1.0 / s);
        }
    }

    let mut dropped = Vec::new();
    let mut keep = Vec::new();
    for j in 0..p {
        let col = rel.column(j);
        let prevalence = col.iter().filter(|v| **v > 0.0).count() as f64 / n as f64;
        let mean = col.mean();
        let reason = if prevalence < cfg.prevalence_min {
            Some(format!("prevalence {prevalence:.4} < {}", cfg.prevalence_min))
        } else if mean < cfg.mean_abundance_min {
            Some(format!("mean abundance {mean:.6} < {}", cfg.mean_abundance_min))
        } else if prevalence == 0.0 {
            Some("all zero".to_string())
        } else {
            None
        };
        match reason {
            Some(reason) => dropped.push(DroppedFeature {
                feature_id: raw.feature_ids[j].clone(),
                reason,
            }),
            None => keep.push(j),
        }
    }

    let mut logged = DMatrix::zeros(n, keep.len());
    for (k, &j) in keep.iter().enumerate() {
        let col = rel.column(j);
        let min_pos = col.iter().copied().filter(|v| *v > 0.0).fold(f64::INFINITY, f64::min);
        let fill = cfg.pseudocount_factor * min_pos;
        for i in 0..n {
            let v = col[i];
            logged[(i, k)] = if v > 0.0 { v.ln() } else { fill.ln() };
        }
    }

    let mut kept_cols = Vec::new();
    let mut center = Vec::new();
    let mut scale = Vec::new();
    for (k, &j) in keep.iter().enumerate() {
        let (m, sd) = mean_sd(logged.column(k).iter().copied());
        if cfg.standardize && !(sd > 0.0) {
            dropped.push(DroppedFeature {
                feature_id: raw.feature_ids[j].clone(),
                reason: "zero variance after log transform".into(),
            });
            continue;
        }
        kept_cols.push(k);
        center.push(m);
        scale.push(sd);
    }
    if kept_cols.is_empty() {
        return Err(Error::input("no features left after filtering"));
    }
    let mut x = logged.select_columns(&kept_cols);
    if cfg.standardize {
        for (c, (m, sd)) in center.iter().zip(&scale).enumerate() {
            x.column_mut(c).iter_mut().for_each(|v| *v = (*v - m) / sd);
        }
    }
    let source_columns: Vec<usize> = kept_cols.iter().map(|&k| keep[k]).collect();
    Ok(PreprocessedDesign {
        x,
        sample_ids: raw.sample_ids.clone(),
        feature_ids: source_columns.iter().map(|&j| raw.feature_ids[j].clone()).collect(),
        source_columns,
        dropped,
        center,
        scale,
    })
}

/// Mean and n−1 standard deviation.
pub fn mean_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let m = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

/// Outcome aligned to the design's sample order, on the log scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub y: Vec<Option<f64>>,
    /// Log of the smallest observed value, before any LOD scaling.
    pub xi: f64,
}

/// Reads a two-column outcome file (`sample_id,<value>`). Zeros and blanks
/// are missing; observed values are log-transformed.
pub fn load_outcome(path: &Path, sample_ids: &[String]) -> Result<Outcome> {
    let table = read_table(path)?;
    if table.col_ids.len() != 1 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: format!("expected one value column, found {}", table.col_ids.len()),
        });
    }
    let by_id: HashMap<&str, Option<f64>> =
        table.row_ids.iter().map(String::as_str).zip(table.rows.iter().map(|r| r[0])).collect();
    if by_id.len() != sample_ids.len() {
        return Err(Error::input(format!(
            "{}: {} outcome rows for {} samples",
            path.display(),
            by_id.len(),
            sample_ids.len()
        )));
    }
    let mut y = Vec::with_capacity(sample_ids.len());
    for id in sample_ids {
        let v = *by_id
            .get(id.as_str())
            .ok_or_else(|| Error::input(format!("{}: no outcome for sample '{id}'", path.display())))?;
        y.push(match v {
            None => None,
            Some(v) if v == 0.0 => None,
            Some(v) if v < 0.0 || !v.is_finite() => {
                return Err(Error::input(format!("{}: invalid outcome {v} for sample '{id}'", path.display())))
            }
            Some(v) => Some(v.ln()),
        });
    }
    let xi = y.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    if !xi.is_finite() {
        return Err(Error::input(format!("{}: every outcome is missing", path.display())));
    }
    Ok(Outcome { y, xi })
}

/// Reads a square Q with feature ids on both axes and restricts it to
/// `feature_ids` (in that order).
pub fn load_q(path: &Path, feature_ids: &[String]) -> Result<IsingQ> {
    let table = read_table(path)?;
    let full = table.dense(path)?;
    if table.row_ids != table.col_ids {
        return Err(Error::input(format!("{}: row and column ids of Q differ", path.display())));
    }
    let pos: HashMap<&str, usize> = table.col_ids.iter().enumerate().map(|(k, id)| (id.as_str(), k)).collect();
    let idx: Vec<usize> = feature_ids
        .iter()
        .map(|id| {
            pos.get(id.as_str())
                .copied()
                .ok_or_else(|| Error::input(format!("{}: feature '{id}' missing from Q", path.display())))
        })
        .collect::<Result<_>>()?;
    let q = DMatrix::from_fn(idx.len(), idx.len(), |a, b| full[(idx[a], idx[b])]);
    IsingQ::new(q)
}
