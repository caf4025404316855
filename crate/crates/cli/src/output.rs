//! Artifact writers. JSON goes through serde_json, whose float output is the
//! shortest string that parses back to the same `f64`; CSV floats are printed
//! with 17 significant digits.

use std::path::Path;

use collapse_lab::data_model::to_one_based;
use collapse_lab::diagnostics::WordRow;
use collapse_lab::trainer::{Dataset, EpochRecord};
use serde::Serialize;

use crate::CliError;

pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_rows(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    w.write_record(header).map_err(|e| CliError::io(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<(), CliError> {
    write_rows(
        path,
        &["epoch", "train_risk"],
        history.iter().map(|r| vec![r.epoch.to_string(), float(r.train_risk)]),
    )
}

pub fn write_words(path: &Path, rows: &[WordRow]) -> Result<(), CliError> {
    write_rows(
        path,
        &["alpha", "beta", "norm", "cosine_to_concept_mean"],
        rows.iter().map(|r| {
            vec![
                r.alpha.to_string(),
                r.beta.to_string(),
                float(r.norm),
                float(r.cosine_to_concept_mean),
            ]
        }),
    )
}

/// One row per sample: 1-based class, then the sentence as `alpha:beta` pairs.
pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<(), CliError> {
    write_rows(
        path,
        &["class", "sentence"],
        dataset.samples().iter().map(|(x, k)| {
            let words: Vec<String> = x
                .words
                .iter()
                .map(|w| {
                    let (a, b) = w.one_based();
                    format!("{a}:{b}")
                })
                .collect();
            vec![to_one_based(*k).to_string(), words.join(" ")]
        }),
    )
}
