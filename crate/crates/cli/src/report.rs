//! Long-format CSV and JSON report files.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, Result};

/// One observation of a metrics report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub split: String,
    pub metric: String,
    pub key: String,
    pub value: f64,
}

impl MetricRow {
    pub fn new(split: &str, metric: &str, key: impl ToString, value: f64) -> Self {
        MetricRow {
            split: split.into(),
            metric: metric.into(),
            key: key.to_string(),
            value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub phase: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumRow {
    pub label: String,
    #[serde(rename = "NgRat")]
    pub ng_rat: f64,
    #[serde(rename = "NgEng")]
    pub ng_eng: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationRow {
    pub statistic: String,
    pub accuracy_column: String,
    pub pearson_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: String,
    pub n: usize,
    #[serde(rename = "B")]
    pub b: usize,
    pub time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BasisRow {
    pub position: usize,
    pub sample_id: usize,
    pub class: usize,
}

/// Creates `dir` and returns `dir/name`.
pub fn output_path(dir: &Path, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    Ok(dir.join(name))
}

/// Writes serializable rows as CSV with a header.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for row in rows {
        w.serialize(row).map_err(err)?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a header and string records.
pub fn write_records(
    path: &Path,
    header: &[String],
    records: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for r in records {
        w.write_record(&r).map_err(err)?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Named numeric columns keyed by the `label` column.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledColumns {
    pub labels: Vec<String>,
    pub columns: Vec<(String, Vec<f64>)>,
}

/// Reads a CSV whose first column is `label` and whose other columns are
/// numeric.
pub fn read_labeled_columns(path: &Path) -> Result<LabeledColumns> {
    let err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(err)?;
    let header = r.headers().map_err(err)?.clone();
    if header.get(0) != Some("label") || header.len() < 2 {
        return Err(CliError::Config(format!(
            "{}: expected a header `label,<accuracy columns...>`",
            path.display()
        )));
    }
    let mut out = LabeledColumns {
        labels: Vec::new(),
        columns: header
            .iter()
            .skip(1)
            .map(|h| (h.to_string(), Vec::new()))
            .collect(),
    };
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(err)?;
        out.labels.push(record[0].to_string());
        for (c, column) in out.columns.iter_mut().enumerate() {
            let v: f64 = record[c + 1].parse().map_err(|_| {
                CliError::Config(format!(
                    "{}, row {}: {:?} is not a number",
                    path.display(),
                    line + 2,
                    &record[c + 1]
                ))
            })?;
            column.1.push(v);
        }
    }
    Ok(out)
}
