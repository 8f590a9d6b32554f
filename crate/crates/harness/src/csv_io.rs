//! Dataset CSV reading and writing, and majority-class undersampling.

use std::collections::BTreeMap;
use std::path::Path;

use ampi_core::rng::{self, domain};
use ampi_core::Dataset;
use ndarray::Array2;

use crate::error::{HarnessError, Result};

/// Column-name mapping for [`load_csv_dataset`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CsvSchema {
    /// Covariate columns in order; empty selects every column that is
    /// neither the label nor a predictor.
    pub covariates: Vec<String>,
    pub label: String,
    pub predictors: Vec<String>,
}

/// Loads a labeled dataset. Every mapped cell must parse as a finite
/// number; failures report the file line.
pub fn load_csv_dataset(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let csv_err = |source| HarnessError::Csv { path: path.into(), source };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let index_of = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| HarnessError::MissingColumn { column: name.to_string(), path: path.into() })
    };
    let label_col = index_of(&schema.label)?;
    let pred_cols: Vec<usize> = schema.predictors.iter().map(|p| index_of(p)).collect::<Result<_>>()?;
    let cov_cols: Vec<usize> = if schema.covariates.is_empty() {
        (0..headers.len()).filter(|c| *c != label_col && !pred_cols.contains(c)).collect()
    } else {
        schema.covariates.iter().map(|c| index_of(c)).collect::<Result<_>>()?
    };

    let d = cov_cols.len();
    let mut covariates = Vec::new();
    let mut labels = Vec::new();
    let mut preds: Vec<Vec<f64>> = vec![Vec::new(); pred_cols.len()];
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        let cell = |c: usize| -> Result<f64> {
            let raw = record.get(c).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| HarnessError::Parse {
                path: path.into(),
                line,
                message: format!("column '{}': cannot parse '{raw}' as a number", &headers[c]),
            })?;
            if !v.is_finite() {
                return Err(HarnessError::Parse {
                    path: path.into(),
                    line,
                    message: format!("column '{}': non-finite value {raw}", &headers[c]),
                });
            }
            Ok(v)
        };
        for &c in &cov_cols {
            covariates.push(cell(c)?);
        }
        labels.push(cell(label_col)?);
        for (out, &c) in preds.iter_mut().zip(&pred_cols) {
            out.push(cell(c)?);
        }
    }
    if labels.is_empty() {
        return Err(HarnessError::Data { path: path.into(), message: "no data rows".into() });
    }
    let n = labels.len();
    let covariates = Array2::from_shape_vec((n, d), covariates).expect("row-major covariates");
    let predictions: BTreeMap<String, Vec<f64>> = schema.predictors.iter().cloned().zip(preds).collect();
    Ok(Dataset::labeled(covariates, labels, predictions)?)
}

/// Writes `data` with covariates `x0..x{d-1}`, label `y`, one column per
/// predictor and the `extra` columns. Values are written in shortest
/// round-trip form, so reloading is exact. Missing labels are empty cells.
pub fn write_dataset_csv(path: &Path, data: &Dataset, extra: &[(&str, &[f64])]) -> Result<()> {
    let csv_err = |source| HarnessError::Csv { path: path.into(), source };
    for (name, col) in extra {
        if col.len() != data.len() {
            return Err(HarnessError::Data {
                path: path.into(),
                message: format!("extra column '{name}' has {} rows, expected {}", col.len(), data.len()),
            });
        }
    }
    let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header: Vec<String> = (0..data.dim()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    header.extend(data.predictions().keys().cloned());
    header.extend(extra.iter().map(|(name, _)| name.to_string()));
    writer.write_record(&header).map_err(csv_err)?;
    for i in 0..data.len() {
        let mut row: Vec<String> = data.covariates().row(i).iter().map(|v| v.to_string()).collect();
        row.push(data.label(i).map(|v| v.to_string()).unwrap_or_default());
        row.extend(data.predictions().values().map(|col| col[i].to_string()));
        row.extend(extra.iter().map(|(_, col)| col[i].to_string()));
        writer.write_record(&row).map_err(csv_err)?;
    }
    writer.flush().map_err(|source| HarnessError::Io { path: path.into(), source })
}

/// Undersamples the majority class of a binary (0/1) label down to the
/// minority count. Kept rows stay in their original order.
pub fn class_balance(data: &Dataset, seed: u64) -> Result<Dataset> {
    let labels = data.require_labels()?;
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(ampi_core::Error::InvalidArgument("class balancing needs 0/1 labels".into()).into());
    }
    let (mut pos, mut neg): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| labels[i] == 1.0);
    if pos.is_empty() || neg.is_empty() {
        return Err(ampi_core::Error::InvalidArgument("class balancing needs both classes present".into()).into());
    }
    let keep = pos.len().min(neg.len());
    let mut g = rng::stream(rng::derive_seed(seed, &[domain::SUBSAMPLE]));
    for class in [&mut pos, &mut neg] {
        if class.len() > keep {
            rng::shuffle(class, &mut g);
            class.truncate(keep);
        }
    }
    let mut rows: Vec<usize> = pos.into_iter().chain(neg).collect();
    rows.sort_unstable();
    Ok(data.select_rows(&rows))
}
