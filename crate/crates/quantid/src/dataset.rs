//! Labeled-dataset ingestion and synthetic dataset generation.
//!
//! CSV files carry a `f1,...,fd,label` header and are streamed row by row so
//! arbitrarily large files fit in constant memory. The synthetic generator
//! produces model-faithful rows and can adversarially flip a fraction of
//! binary labels, targeting the rows whose true signal is farthest from the
//! threshold (the most confidently decided ones).

use nalgebra::DVector;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::fs::File;
use std::path::Path;
use thiserror::Error;

use crate::noise::NoiseModel;
use crate::quantizer::QuantizerSpec;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot open dataset: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot read dataset: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad header: {0}")]
    Header(String),
    #[error("line {line}: {problem}")]
    Row { line: u64, problem: String },
    #[error("invalid synthetic spec: {0}")]
    Invalid(String),
}

/// One labeled example: `d` features and a level in `1..=m+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub features: Vec<f64>,
    pub label: usize,
}

/// Streaming CSV row source; yields rows in file order.
pub struct CsvRows {
    records: csv::StringRecordsIntoIter<File>,
    dimension: usize,
    num_levels: usize,
}

impl Iterator for CsvRows {
    type Item = Result<DatasetRow, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        let record = match self.records.next()? {
            Ok(record) => record,
            Err(e) => return Some(Err(e.into())),
        };
        let line = record.position().map_or(0, |p| p.line());
        let row_err = |problem: String| DatasetError::Row { line, problem };

        if record.len() != self.dimension + 1 {
            return Some(Err(row_err(format!(
                "expected {} columns, got {}",
                self.dimension + 1,
                record.len()
            ))));
        }
        let mut features = Vec::with_capacity(self.dimension);
        for (i, cell) in record.iter().take(self.dimension).enumerate() {
            match cell.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => features.push(v),
                Ok(v) => return Some(Err(row_err(format!("feature f{} = {v} is not finite", i + 1)))),
                Err(_) => {
                    return Some(Err(row_err(format!("feature f{} is not numeric: {cell:?}", i + 1))))
                }
            }
        }
        let label_cell = &record[self.dimension];
        let label = match label_cell.trim().parse::<usize>() {
            Ok(v) => v,
            Err(_) => {
                return Some(Err(row_err(format!("label is not an integer: {label_cell:?}"))))
            }
        };
        if label < 1 || label > self.num_levels {
            return Some(Err(row_err(format!(
                "label {label} out of range 1..={}",
                self.num_levels
            ))));
        }
        Some(Ok(DatasetRow { features, label }))
    }
}

/// Open a dataset for streaming. Fails up front when the header is not
/// `f1,...,fd,label`.
pub fn ingest_csv(path: &Path, dimension: usize, num_levels: usize) -> Result<CsvRows, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        // ragged rows reach the per-row column check, which reports the line
        .flexible(true)
        .from_path(path)
        .map_err(DatasetError::Csv)?;
    let headers = reader.headers()?.clone();
    let expected: Vec<String> = (1..=dimension)
        .map(|i| format!("f{i}"))
        .chain(std::iter::once("label".to_string()))
        .collect();
    let got: Vec<String> = headers.iter().map(str::to_string).collect();
    if got != expected {
        return Err(DatasetError::Header(format!(
            "expected {:?}, got {got:?}",
            expected.join(",")
        )));
    }
    Ok(CsvRows {
        records: reader.into_records(),
        dimension,
        num_levels,
    })
}

/// Write rows with the standard header.
pub fn write_csv(path: &Path, dimension: usize, rows: &[DatasetRow]) -> Result<(), DatasetError> {
    let mut writer = csv::Writer::from_path(path)?;
    let header: Vec<String> = (1..=dimension)
        .map(|i| format!("f{i}"))
        .chain(std::iter::once("label".to_string()))
        .collect();
    writer.write_record(&header)?;
    for row in rows {
        let mut record: Vec<String> = row.features.iter().map(|v| v.to_string()).collect();
        record.push(row.label.to_string());
        writer.write_record(&record)?;
    }
    writer.flush().map_err(DatasetError::Io)?;
    Ok(())
}

/// Recipe for a model-faithful synthetic dataset.
#[derive(Debug, Clone)]
pub struct SyntheticDatasetSpec {
    pub dimension: usize,
    /// Ground truth the labels are generated from; features are uniform on
    /// `[-1, 1]^d`.
    pub theta_true: Vec<f64>,
    pub rows: usize,
    /// Fraction of labels to flip adversarially; binary quantizers only.
    pub flip_fraction: f64,
    pub seed: u64,
}

/// Generate rows from the quantized observation model, then flip the labels
/// of the `flip_fraction` rows with the largest `|phi' theta - c|` margin.
pub fn generate_synthetic(
    spec: &SyntheticDatasetSpec,
    quantizer: &QuantizerSpec,
    noise: &NoiseModel,
) -> Result<Vec<DatasetRow>, DatasetError> {
    if spec.dimension == 0 || spec.theta_true.len() != spec.dimension {
        return Err(DatasetError::Invalid(format!(
            "theta_true must have {} components",
            spec.dimension
        )));
    }
    if !(0.0..=1.0).contains(&spec.flip_fraction) {
        return Err(DatasetError::Invalid(format!(
            "flip_fraction must lie in [0, 1], got {}",
            spec.flip_fraction
        )));
    }
    if spec.flip_fraction > 0.0 && quantizer.num_thresholds() != 1 {
        return Err(DatasetError::Invalid(
            "label flipping is only defined for binary quantizers".into(),
        ));
    }

    let theta = DVector::from_vec(spec.theta_true.clone());
    let mut rng = StdRng::seed_from_u64(spec.seed);
    let mut rows = Vec::with_capacity(spec.rows);
    let mut margins: Vec<(usize, f64)> = Vec::with_capacity(spec.rows);
    let threshold = quantizer.lowest_threshold();
    for index in 0..spec.rows {
        let phi = DVector::from_fn(spec.dimension, |_, _| rng.random_range(-1.0..=1.0));
        let signal = phi.dot(&theta);
        let label = quantizer.quantize(signal + noise.sample(&mut rng));
        margins.push((index, (signal - threshold).abs()));
        rows.push(DatasetRow {
            features: phi.iter().copied().collect(),
            label,
        });
    }

    let flips = (spec.flip_fraction * spec.rows as f64).ceil() as usize;
    if flips > 0 {
        margins.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for &(index, _) in margins.iter().take(flips.min(spec.rows)) {
            rows[index].label = 3 - rows[index].label;
        }
    }
    Ok(rows)
}
