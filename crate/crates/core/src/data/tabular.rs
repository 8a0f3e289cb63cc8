use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};

fn csv_err(path: &Path, line: u64, detail: impl Into<String>) -> Error {
    Error::Csv {
        path: path.display().to_string(),
        line,
        detail: detail.into(),
    }
}

fn from_csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            csv_err(path, line, format!("expected {expected_len} fields, found {len}"))
        }
        other => csv_err(path, line, format!("{other:?}")),
    }
}

/// Reads a comma-separated numeric table. Columns listed in `target_cols`
/// (0-based) become targets in the given order; the rest are inputs in file
/// order. With `skip_header`, the first line supplies column names.
pub fn load_csv(path: impl AsRef<Path>, target_cols: &[usize], skip_header: bool) -> Result<Dataset> {
    let path = path.as_ref();
    if target_cols.is_empty() {
        return Err(Error::Param("at least one target column is required".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(skip_header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| from_csv_error(path, e))?;
    let header: Option<Vec<String>> = if skip_header {
        Some(
            reader
                .headers()
                .map_err(|e| from_csv_error(path, e))?
                .iter()
                .map(str::to_string)
                .collect(),
        )
    } else {
        None
    };

    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let mut width = None;
    let mut input_cols = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| from_csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let w = *width.get_or_insert_with(|| {
            input_cols = (0..rec.len()).filter(|c| !target_cols.contains(c)).collect();
            rec.len()
        });
        if let Some(&bad) = target_cols.iter().find(|&&c| c >= w) {
            return Err(csv_err(
                path,
                line,
                format!("target column {bad} out of range for {w} columns"),
            ));
        }
        if input_cols.is_empty() {
            return Err(csv_err(path, line, "no input columns remain"));
        }
        let cell = |c: usize| -> Result<f64> {
            let s = &rec[c];
            let v: f64 = s
                .parse()
                .map_err(|_| csv_err(path, line, format!("column {c}: '{s}' is not a number")))?;
            if !v.is_finite() {
                return Err(csv_err(path, line, format!("column {c}: non-finite value '{s}'")));
            }
            Ok(v)
        };
        for &c in &input_cols {
            inputs.push(cell(c)?);
        }
        for &c in target_cols {
            targets.push(cell(c)?);
        }
    }
    let Some(w) = width else {
        return Err(csv_err(path, 0, "no data rows"));
    };
    let n_in = w - target_cols.len();
    let ds = Dataset::new(inputs, targets, n_in, target_cols.len())?;
    match header {
        Some(h) if h.len() == w => {
            let names = input_cols.iter().chain(target_cols).map(|&c| h[c].clone()).collect();
            ds.with_names(names)
        }
        _ => Ok(ds),
    }
}

/// Writes inputs then targets per row, with a header line. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| from_csv_error(path, e))?;
    let header: Vec<String> = match &ds.names {
        Some(n) => n.clone(),
        None => (0..ds.n_in())
            .map(|j| format!("x{j}"))
            .chain((0..ds.n_out()).map(|j| format!("y{j}")))
            .collect(),
    };
    w.write_record(&header).map_err(|e| from_csv_error(path, e))?;
    for i in 0..ds.len() {
        let row: Vec<String> = ds.x(i).iter().chain(ds.y(i)).map(|v| v.to_string()).collect();
        w.write_record(&row).map_err(|e| from_csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
