//! CSV tables written by the experiments.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::Error;

/// One method's best cost after a given number of energy evaluations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub seed: u64,
    pub method: String,
    pub evaluations: u64,
    pub best_cost: f64,
}

/// Columns of a [`CostRow`] file.
pub const COST_COLUMNS: [&str; 4] = ["seed", "method", "evaluations", "best_cost"];

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Plot(format!("{}: {e}", path.display()))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<(), Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_cost_rows(path: &Path, rows: &[CostRow]) -> Result<(), Error> {
    write_csv(path, rows, &COST_COLUMNS)
}

/// Header and string records of a CSV file.
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn read(path: &Path) -> Result<Self, Error> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let header = r.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<Result<_, _>>()
            .map_err(|e| csv_err(path, e))?;
        Ok(Self { header, rows })
    }

    /// Indices of `columns`, or an error naming every one that is absent.
    pub fn require(&self, columns: &[&str]) -> Result<Vec<usize>, Error> {
        let missing: Vec<&str> = columns.iter().copied().filter(|c| !self.header.iter().any(|h| h == c)).collect();
        if !missing.is_empty() {
            return Err(Error::Plot(format!("missing columns: {}", missing.join(", "))));
        }
        Ok(columns.iter().map(|c| self.header.iter().position(|h| h == c).unwrap()).collect())
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
