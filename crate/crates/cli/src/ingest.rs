//! Recoding of 7-point agreement scales into binary responses.

use std::path::Path;

use lcm_core::ResponseMatrix;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    /// Agreement (5, 6, 7) counts as a positive response.
    Positive,
    /// Disagreement (1, 2, 3) counts as a positive response.
    Negative,
}

impl std::str::FromStr for Sign {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "+" => Ok(Sign::Positive),
            "-" | "\u{2212}" => Ok(Sign::Negative),
            other => Err(CliError::Data(format!(
                "key sign must be '+' or '-', got {other:?}"
            ))),
        }
    }
}

pub fn recode(value: i64, sign: Sign) -> Result<u8> {
    if !(1..=7).contains(&value) {
        return Err(CliError::Data(format!(
            "response {value} is outside the scale 1..7"
        )));
    }
    Ok(match sign {
        Sign::Positive => u8::from(value >= 5),
        Sign::Negative => u8::from(value <= 3),
    })
}

/// One sign per raw column, from `item_index,sign` rows (1-based, header optional).
pub fn read_key(path: &Path, n_columns: usize) -> Result<Vec<Sign>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut signs: Vec<Option<Sign>> = vec![None; n_columns];
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let (Some(idx), Some(sign)) = (rec.get(0), rec.get(1)) else {
            return Err(CliError::Data(format!(
                "{}: line {} needs item_index,sign",
                path.display(),
                line + 1
            )));
        };
        let Ok(idx) = idx.parse::<usize>() else {
            if line == 0 {
                continue;
            }
            return Err(CliError::Data(format!(
                "{}: line {}: bad item index {idx:?}",
                path.display(),
                line + 1
            )));
        };
        if idx == 0 || idx > n_columns {
            return Err(CliError::Data(format!(
                "{}: item {idx} does not exist, the raw file has {n_columns} columns",
                path.display()
            )));
        }
        if signs[idx - 1].replace(sign.parse()?).is_some() {
            return Err(CliError::Data(format!(
                "{}: item {idx} appears twice",
                path.display()
            )));
        }
    }
    signs
        .into_iter()
        .enumerate()
        .map(|(j, s)| {
            s.ok_or_else(|| {
                CliError::Data(format!("{}: no sign for item {}", path.display(), j + 1))
            })
        })
        .collect()
}

pub fn read_raw(path: &Path, has_header: bool) -> Result<Vec<Vec<i64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<i64>().map_err(|_| {
                    CliError::Data(format!(
                        "{}: row {}: {s:?} is not an integer",
                        path.display(),
                        i + 1
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn binarize(raw: &[Vec<i64>], key: &[Sign]) -> Result<ResponseMatrix> {
    let mut rows = Vec::with_capacity(raw.len());
    for (i, row) in raw.iter().enumerate() {
        if row.len() != key.len() {
            return Err(CliError::Data(format!(
                "row {} has {} values, the key has {} items",
                i + 1,
                row.len(),
                key.len()
            )));
        }
        let bin = row
            .iter()
            .zip(key)
            .map(|(&v, &s)| recode(v, s))
            .collect::<Result<Vec<u8>>>()
            .map_err(|e| CliError::Data(format!("row {}: {e}", i + 1)))?;
        rows.push(bin);
    }
    Ok(ResponseMatrix::validate(&rows)?)
}
