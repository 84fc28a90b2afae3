//! Data ingestion: comma-separated, `.` decimal, optional single header row,
//! LF or CRLF line endings. The first columns form the design, the last one
//! the response.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, QlcError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub design: DMatrix<f64>,
    pub responses: Vec<f64>,
    /// Column names when a header row was present.
    pub header: Option<Vec<String>>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.responses.len()
    }

    pub fn p(&self) -> usize {
        self.design.ncols()
    }
}

/// Lightweight summary written alongside reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub n: usize,
    pub p: usize,
    pub header: Option<Vec<String>>,
}

impl From<&Dataset> for DataSummary {
    fn from(d: &Dataset) -> Self {
        DataSummary { n: d.n(), p: d.p(), header: d.header.clone() }
    }
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| QlcError::InvalidInput(format!("cannot open {}: {e}", path.display())))?;
    read_csv(file)
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(input);
    let mut header: Option<Vec<String>> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => {
                if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
                    return invalid(format!("row {}: non-finite value {bad}", line + 1));
                }
                rows.push(v);
            }
            Err(_) if line == 0 => header = Some(record.iter().map(str::to_string).collect()),
            Err(e) => return invalid(format!("row {}: {e}", line + 1)),
        }
    }
    let width = match rows.first() {
        Some(r) => r.len(),
        None => return invalid("no data rows"),
    };
    if width < 2 {
        return invalid("need at least one design column and a response column");
    }
    if let Some(h) = &header {
        if h.len() != width {
            return invalid("header width differs from the data");
        }
    }
    let p = width - 1;
    let design = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
    let responses = rows.iter().map(|r| r[p]).collect();
    Ok(Dataset { design, responses, header })
}
