//! Long-format experiment reports, Markdown rendering and run manifests.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::{csv_err, format_float, write_atomic};

pub const REPORT_HEADER: [&str; 4] = ["scenario", "estimator", "metric", "value"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: String,
    pub estimator: String,
    pub metric: String,
    pub value: f64,
}

/// Rows in insertion order. Order is part of the output, so reports built the
/// same way serialize to identical bytes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, scenario: &str, estimator: &str, metric: &str, value: f64) {
        self.rows.push(ReportRow {
            scenario: scenario.to_string(),
            estimator: estimator.to_string(),
            metric: metric.to_string(),
            value,
        });
    }

    pub fn extend(&mut self, other: Report) {
        self.rows.extend(other.rows);
    }

    pub fn get(&self, scenario: &str, estimator: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.scenario == scenario && r.estimator == estimator && r.metric == metric)
            .map(|r| r.value)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(REPORT_HEADER).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([r.scenario.as_str(), &r.estimator, &r.metric, &format_float(r.value)])
                .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::data(e.to_string()))
    }

    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers().map_err(csv_err)?.clone();
        if header.iter().map(str::trim).ne(REPORT_HEADER) {
            return Err(Error::data(format!(
                "report header must be {}, got {}",
                REPORT_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let row = i + 2;
            let rec = rec.map_err(|e| Error::data(format!("row {row}: {e}")))?;
            let cell = |j: usize| rec.get(j).unwrap_or("").trim().to_string();
            let raw = cell(3);
            let value: f64 = raw
                .parse()
                .map_err(|_| Error::data(format!("row {row}, column 'value': cannot parse '{raw}' as a number")))?;
            rows.push(ReportRow { scenario: cell(0), estimator: cell(1), metric: cell(2), value });
        }
        Ok(Self { rows })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv_string()?.as_bytes())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_csv(std::fs::File::open(path)?)
    }

    /// One table per scenario: estimators as rows, metrics as columns, both in
    /// order of first appearance.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        for scenario in first_seen(self.rows.iter().map(|r| r.scenario.as_str())) {
            let rows: Vec<&ReportRow> = self.rows.iter().filter(|r| r.scenario == scenario).collect();
            let estimators = first_seen(rows.iter().map(|r| r.estimator.as_str()));
            let metrics = first_seen(rows.iter().map(|r| r.metric.as_str()));
            if !out.is_empty() {
                out.push('\n');
            }
            out.push_str(&format!("## {scenario}\n\n| estimator |"));
            for m in &metrics {
                out.push_str(&format!(" {m} |"));
            }
            out.push_str("\n|---|");
            out.push_str(&"---:|".repeat(metrics.len()));
            out.push('\n');
            for e in &estimators {
                out.push_str(&format!("| {e} |"));
                for m in &metrics {
                    let cell = rows
                        .iter()
                        .find(|r| r.estimator == *e && r.metric == *m)
                        .map(|r| format_cell(m, r.value))
                        .unwrap_or_default();
                    out.push_str(&format!(" {cell} |"));
                }
                out.push('\n');
            }
        }
        out
    }
}

fn first_seen<'a>(items: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut seen: Vec<&str> = Vec::new();
    for s in items {
        if !seen.contains(&s) {
            seen.push(s);
        }
    }
    seen
}

fn is_ratio(metric: &str) -> bool {
    matches!(metric, "relative_mse" | "re" | "lambda_accuracy") || metric.ends_with("_fraction")
}

/// Ratios as percentages; counts as integers; other values to four decimals,
/// switching to scientific notation outside `[1e-3, 1e6)`.
pub fn format_cell(metric: &str, v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if is_ratio(metric) {
        return format!("{:.2}%", v * 100.0);
    }
    if v.fract() == 0.0 && v.abs() < 1e15 && (metric == "replications" || metric.ends_with("_replications")) {
        return format!("{v:.0}");
    }
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e6).contains(&a) {
        format!("{v:.4e}")
    } else {
        format!("{v:.4}")
    }
}

/// Metadata written next to every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// SHA-256 of the canonical JSON form of the resolved configuration.
    pub config_digest: String,
    pub replications: usize,
    pub failed_replications: usize,
    pub workers: usize,
    pub elapsed_seconds: f64,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::data(e.to_string()))?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::data(e.to_string()))
    }
}

/// Lowercase hex SHA-256 of the JSON serialization of `config`.
pub fn config_digest<T: Serialize>(config: &T) -> Result<String> {
    let text = serde_json::to_string(config).map_err(|e| Error::config(e.to_string()))?;
    Ok(Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
}
