//! CSV ingestion.

use std::fs::File;
use std::path::Path;

use scboot::Dataset;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Which columns of the input file to use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub response: String,
    pub covariates: Vec<String>,
    /// Optional time column; must be strictly increasing when given.
    pub time: Option<String>,
    /// Prepend a column of ones.
    pub intercept: bool,
}

impl Schema {
    /// Names of the model coefficients, in order.
    pub fn coefficient_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if self.intercept {
            names.push("intercept".to_string());
        }
        names.extend(self.covariates.iter().cloned());
        names
    }
}

fn parse_cell(raw: &str, row: usize, column: &str) -> CliResult<f64> {
    let trimmed = raw.trim();
    match trimmed.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(CliError::NonNumeric { row, column: column.to_string(), value: trimmed.to_string() }),
    }
}

/// Reads a headed CSV file. Rows are numbered from 1, header excluded.
pub fn ingest_csv(path: &Path, schema: &Schema) -> CliResult<Dataset> {
    let file = File::open(path).map_err(|source| CliError::Open { path: path.to_path_buf(), source })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| CliError::Parse { row: 0, message: e.to_string() })?
        .clone();
    let locate = |name: &str| -> CliResult<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CliError::MissingColumn(name.to_string()))
    };
    let y_col = locate(&schema.response)?;
    let x_cols = schema.covariates.iter().map(|c| locate(c)).collect::<CliResult<Vec<_>>>()?;
    let t_col = schema.time.as_deref().map(locate).transpose()?;

    let p = x_cols.len() + usize::from(schema.intercept);
    if p == 0 {
        return Err(CliError::Config("the model has no covariates".into()));
    }
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut last_time = f64::NEG_INFINITY;
    for (k, record) in reader.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| CliError::Parse { row, message: e.to_string() })?;
        let cell = |col: usize, name: &str| parse_cell(record.get(col).unwrap_or(""), row, name);
        if let (Some(col), Some(name)) = (t_col, schema.time.as_deref()) {
            let t = cell(col, name)?;
            if t <= last_time {
                return Err(CliError::Parse { row, message: format!("time column '{name}' is not strictly increasing") });
            }
            last_time = t;
        }
        y.push(cell(y_col, &schema.response)?);
        if schema.intercept {
            x.push(1.0);
        }
        for (col, name) in x_cols.iter().zip(&schema.covariates) {
            x.push(cell(*col, name)?);
        }
    }
    if y.is_empty() {
        return Err(CliError::EmptyFile(path.to_path_buf()));
    }
    Ok(Dataset::from_rows(p, x, y)?)
}

/// Writes a dataset with columns `y, x1, ..., xp`.
pub fn write_csv(path: &Path, data: &Dataset, names: &[String]) -> CliResult<()> {
    let wrap = |e: csv::Error| CliError::Write { path: path.to_path_buf(), source: e.into() };
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    let mut header = vec!["y".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header).map_err(wrap)?;
    for i in 1..=data.n() {
        let mut rec = vec![format!("{:?}", data.y(i))];
        rec.extend(data.x(i).iter().map(|v| format!("{v:?}")));
        w.write_record(&rec).map_err(wrap)?;
    }
    w.flush().map_err(|source| CliError::Write { path: path.to_path_buf(), source })?;
    Ok(())
}
