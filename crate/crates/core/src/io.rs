//! File plumbing: atomic writes and numeric CSV ingestion.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data::{Dataset, Matrix};
use crate::error::{Error, Result};

/// Writes `bytes` to a temporary sibling file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::config(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

/// Header plus numeric rows of a CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl NumericTable {
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::data(format!("column '{name}' not found in header")))
    }
}

/// Parses a CSV with a header row; every cell must be a finite number.
pub fn read_numeric_csv<R: std::io::Read>(reader: R) -> Result<NumericTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::data(format!("CSV header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(Error::data("CSV header is empty"));
    }
    let mut rows = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let line = r + 2;
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
                Error::data(format!("row {line}: expected {expected_len} fields, found {len}"))
            }
            _ => Error::data(format!("row {line}: {e}")),
        })?;
        let mut row = Vec::with_capacity(header.len());
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::data(format!("row {line}, column '{}': cannot parse '{cell}' as a number", header[c])))?;
            if !v.is_finite() {
                return Err(Error::data(format!("row {line}, column '{}': value is not finite", header[c])));
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::data("CSV has no data rows"));
    }
    Ok(NumericTable { header, rows })
}

pub fn read_numeric_csv_path(path: &Path) -> Result<NumericTable> {
    let f = fs::File::open(path).map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    read_numeric_csv(f)
}

/// Splits a table into features and outcome; with `treatment`, that column is
/// recorded as the treatment and kept as the first feature.
pub fn dataset_from_table(table: &NumericTable, outcome: &str, treatment: Option<&str>) -> Result<Dataset> {
    let yi = table.column_index(outcome)?;
    let ai = treatment.map(|t| table.column_index(t)).transpose()?;
    let mut cols: Vec<usize> = Vec::new();
    if let Some(a) = ai {
        cols.push(a);
    }
    cols.extend((0..table.header.len()).filter(|&j| j != yi && Some(j) != ai));
    if cols.is_empty() {
        return Err(Error::data("no feature columns besides the outcome"));
    }
    let n = table.rows.len();
    let mut data = Vec::with_capacity(n * cols.len());
    for row in &table.rows {
        data.extend(cols.iter().map(|&j| row[j]));
    }
    let x = Matrix::from_row_major(n, cols.len(), data)?;
    let y: Vec<f64> = table.rows.iter().map(|r| r[yi]).collect();
    let names = cols.iter().map(|&j| table.header[j].clone()).collect();
    let ds = Dataset::with_names(x, y, names)?;
    match ai {
        Some(a) => ds.with_treatment(table.rows.iter().map(|r| r[a]).collect()),
        None => Ok(ds),
    }
}

/// Features by name, in the given order.
pub fn features_from_table(table: &NumericTable, names: &[String]) -> Result<Matrix> {
    let idx: Vec<usize> = names.iter().map(|n| table.column_index(n)).collect::<Result<_>>()?;
    let mut data = Vec::with_capacity(table.rows.len() * idx.len());
    for row in &table.rows {
        data.extend(idx.iter().map(|&j| row[j]));
    }
    Matrix::from_row_major(table.rows.len(), idx.len(), data)
}

/// Shortest decimal text that parses back to the same `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}

/// One-column CSV of values under `name`.
pub fn column_csv(name: &str, values: &[f64]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([name]).map_err(csv_err)?;
    for v in values {
        w.write_record([format_float(*v)]).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::data(format!("CSV: {e}"))
}
