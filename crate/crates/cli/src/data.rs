use std::path::Path;

use trimfmr::Dataset;

use crate::error::{CliError, CliResult};

/// A CSV file split into response and covariates.
pub struct LoadedData {
    pub dataset: Dataset,
    pub covariate_names: Vec<String>,
}

/// Reads a comma-separated file with a header row. `response` names the
/// response column; every other column is a numeric covariate.
pub fn load_csv(path: &Path, response: &str) -> CliResult<LoadedData> {
    let file = std::fs::File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    read_csv(file, response).map_err(|e| match e {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn read_csv<R: std::io::Read>(input: R, response: &str) -> CliResult<LoadedData> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Data(format!("header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let ycol = header.iter().position(|h| h == response).ok_or_else(|| {
        CliError::Data(format!("response column '{response}' not found (columns: {})", header.join(", ")))
    })?;
    let covariate_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != ycol)
        .map(|(_, h)| h.clone())
        .collect();

    let mut y = Vec::new();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| match e.position() {
            Some(pos) => CliError::Data(format!("line {}: malformed record: {e}", pos.line())),
            None => CliError::Data(e.to_string()),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let mut row = Vec::with_capacity(covariate_names.len());
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                CliError::Data(format!("line {line}, column '{}': '{cell}' is not a number", header[c]))
            })?;
            if !v.is_finite() {
                return Err(CliError::Data(format!("line {line}, column '{}': value is not finite", header[c])));
            }
            if c == ycol {
                y.push(v);
            } else {
                row.push(v);
            }
        }
        rows.push(row);
    }
    if y.is_empty() {
        return Err(CliError::Data("no data rows".into()));
    }
    let dataset = Dataset::from_covariates(y, &rows)?;
    Ok(LoadedData { dataset, covariate_names })
}
