//! Row-keyed numeric tables with named columns. Missing values are `NaN` in
//! memory and empty fields on disk.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    pub id_column: String,
    pub row_ids: Vec<u64>,
    pub columns: Vec<String>,
    /// Row-major, `row_ids.len() * columns.len()` values.
    pub values: Vec<f64>,
}

impl FeatureTable {
    pub fn new(id_column: impl Into<String>, columns: Vec<String>) -> Self {
        FeatureTable { id_column: id_column.into(), row_ids: Vec::new(), columns, values: Vec::new() }
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn push_row(&mut self, id: u64, row: &[f64]) {
        assert_eq!(row.len(), self.columns.len(), "row width must match column count");
        self.row_ids.push(id);
        self.values.extend_from_slice(row);
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.columns.len();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.columns.len() + col]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Keeps only the named columns, in the given order.
    pub fn select(&self, names: &[String]) -> Result<FeatureTable> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| self.column_index(n).ok_or_else(|| Error::Data(format!("unknown column `{n}`"))))
            .collect::<Result<_>>()?;
        let mut out = FeatureTable::new(self.id_column.clone(), names.to_vec());
        for r in 0..self.n_rows() {
            let row: Vec<f64> = idx.iter().map(|&c| self.get(r, c)).collect();
            out.push_row(self.row_ids[r], &row);
        }
        Ok(out)
    }

    /// Writes CSV. `comment` lines (without the leading `#`) are emitted first.
    pub fn write_csv(&self, path: &Path, comment: Option<&str>) -> Result<()> {
        let mut buf = Vec::new();
        if let Some(c) = comment {
            for line in c.lines() {
                buf.extend(format!("# {line}\n").as_bytes());
            }
        }
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            let mut header = vec![self.id_column.clone()];
            header.extend(self.columns.iter().cloned());
            w.write_record(&header).map_err(|e| Error::parse(path, e))?;
            for r in 0..self.n_rows() {
                let mut rec = vec![self.row_ids[r].to_string()];
                rec.extend(self.row(r).iter().map(|v| fmt_value(*v)));
                w.write_record(&rec).map_err(|e| Error::parse(path, e))?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<FeatureTable> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| Error::parse(path, e))?;
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::parse(path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.is_empty() {
            return Err(Error::parse(path, "missing header"));
        }
        let mut t = FeatureTable::new(header[0].clone(), header[1..].to_vec());
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::parse(path, e))?;
            let id: u64 = rec[0].trim().parse().map_err(|e| Error::parse(path, e))?;
            let row: Vec<f64> = rec
                .iter()
                .skip(1)
                .map(|s| parse_value(s).map_err(|e| Error::parse(path, e)))
                .collect::<Result<_>>()?;
            if row.len() != t.columns.len() {
                return Err(Error::parse(path, format!("row {id} has {} values", row.len())));
            }
            t.push_row(id, &row);
        }
        Ok(t)
    }
}

/// Shortest round-trippable representation; missing values are empty.
pub fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:?}")
    }
}

pub fn parse_value(s: &str) -> std::result::Result<f64, std::num::ParseFloatError> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("nan") || s.eq_ignore_ascii_case("na") {
        Ok(f64::NAN)
    } else {
        s.parse()
    }
}
