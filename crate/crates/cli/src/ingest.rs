//! CSV ingestion.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use resrand::linmodel::Dataset;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-numeric value {value:?} in column `{column}` at line {line}")]
    NonNumericCell {
        line: u64,
        column: String,
        value: String,
    },

    #[error("line {line} has {found} fields but the header has {expected}")]
    RaggedRow {
        line: u64,
        expected: usize,
        found: usize,
    },

    #[error("no covariate columns (named x*) and no intercept")]
    NoCovariates,

    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Model(#[from] resrand::Error),
}

/// A dataset plus the names of its design columns.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub data: Dataset,
    pub columns: Vec<String>,
}

/// Maps labels to `0..J-1` in order of first appearance.
pub fn normalize_labels(raw: &[String]) -> Vec<usize> {
    let mut seen: HashMap<&str, usize> = HashMap::new();
    raw.iter()
        .map(|s| {
            let next = seen.len();
            *seen.entry(s.as_str()).or_insert(next)
        })
        .collect()
}

pub fn ingest_csv(path: &Path, intercept: bool) -> Result<Ingested, IngestError> {
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ingest_reader(file, intercept)
}

pub fn ingest_reader<R: Read>(reader: R, intercept: bool) -> Result<Ingested, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| header.iter().position(|h| h == name);
    let y_col = find("y").ok_or_else(|| IngestError::MissingColumn("y".into()))?;
    let x_cols: Vec<usize> = (0..header.len())
        .filter(|&i| header[i].starts_with('x'))
        .collect();
    let (cluster_col, row_col, col_col, time_col) =
        (find("cluster"), find("rowc"), find("colc"), find("time"));
    match (row_col, col_col) {
        (Some(_), None) => return Err(IngestError::MissingColumn("colc".into())),
        (None, Some(_)) => return Err(IngestError::MissingColumn("rowc".into())),
        _ => {}
    }
    if x_cols.is_empty() && !intercept {
        return Err(IngestError::NoCovariates);
    }

    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut cluster = Vec::new();
    let mut rows = Vec::new();
    let mut cols = Vec::new();
    let mut time = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(IngestError::RaggedRow {
                line,
                expected: header.len(),
                found: record.len(),
            });
        }
        let number = |i: usize| {
            record[i]
                .parse::<f64>()
                .map_err(|_| IngestError::NonNumericCell {
                    line,
                    column: header[i].clone(),
                    value: record[i].to_string(),
                })
        };
        y.push(number(y_col)?);
        for &c in &x_cols {
            x.push(number(c)?);
        }
        if let Some(c) = cluster_col {
            cluster.push(record[c].to_string());
        }
        if let (Some(r), Some(c)) = (row_col, col_col) {
            rows.push(record[r].to_string());
            cols.push(record[c].to_string());
        }
        if let Some(c) = time_col {
            let t = record[c]
                .parse::<i64>()
                .map_err(|_| IngestError::NonNumericCell {
                    line,
                    column: header[c].clone(),
                    value: record[c].to_string(),
                })?;
            time.push(t);
        }
    }

    let n = y.len();
    let k = x_cols.len();
    let offset = usize::from(intercept);
    let design = DMatrix::from_fn(n, k + offset, |i, j| {
        if j < offset {
            1.0
        } else {
            x[i * k + j - offset]
        }
    });
    let mut columns: Vec<String> = Vec::with_capacity(k + offset);
    if intercept {
        columns.push("intercept".into());
    }
    columns.extend(x_cols.iter().map(|&c| header[c].clone()));

    let mut data = Dataset::new(DVector::from_vec(y), design)?;
    if cluster_col.is_some() {
        data = data.with_clusters(normalize_labels(&cluster))?;
    }
    if row_col.is_some() {
        // Row and column labels name the same entities in dyadic data.
        let mut both = rows.clone();
        both.extend(cols.iter().cloned());
        let labels = normalize_labels(&both);
        let (r, c) = labels.split_at(n);
        data = data.with_two_way(r.to_vec(), c.to_vec())?;
    }
    if time_col.is_some() {
        data = data.with_time(time)?;
    }
    Ok(Ingested { data, columns })
}
