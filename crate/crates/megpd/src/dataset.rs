//! Bivariate dataset container with CSV and manifest serialization.

use crate::error::{Error, Result};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// How a dataset came to be: source files and the filters applied to them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub sources: Vec<String>,
    pub filters: Vec<String>,
    /// Named counts (per-station retained days, pair count, dropped rows...).
    pub counts: Vec<(String, usize)>,
    pub notes: Vec<String>,
}

/// An n x 2 matrix of nonnegative observations plus metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset<T> {
    rows: Vec<[T; 2]>,
    pub labels: [String; 2],
    /// Per-column positive factors the raw columns were divided by, when
    /// standardization was applied.
    pub scaling_factors: Option<[T; 2]>,
    pub provenance: Option<Provenance>,
}

impl<T: Real> Dataset<T> {
    pub fn from_rows(rows: Vec<[T; 2]>) -> Result<Self> {
        if rows
            .iter()
            .any(|r| r.iter().any(|v| !v.is_finite() || *v < T::zero()))
        {
            return Err(Error::Domain(
                "dataset entries must be finite and nonnegative".into(),
            ));
        }
        Ok(Dataset {
            rows,
            labels: ["y1".into(), "y2".into()],
            scaling_factors: None,
            provenance: None,
        })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[[T; 2]] {
        &self.rows
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        assert!(j < 2, "column index out of range");
        self.rows.iter().map(|r| r[j]).collect()
    }

    /// L1 radii `y1 + y2` of every row.
    pub fn radii(&self) -> Vec<T> {
        self.rows.iter().map(|r| r[0] + r[1]).collect()
    }

    /// First angular coordinates `y1 / (y1 + y2)`; NaN on all-zero rows.
    pub fn angles(&self) -> Vec<T> {
        self.rows.iter().map(|r| r[0] / (r[0] + r[1])).collect()
    }

    pub fn cast<U: Real>(&self) -> Dataset<U> {
        Dataset {
            rows: self
                .rows
                .iter()
                .map(|r| [U::from_f64(r[0].as_f64()), U::from_f64(r[1].as_f64())])
                .collect(),
            labels: self.labels.clone(),
            scaling_factors: self
                .scaling_factors
                .map(|f| [U::from_f64(f[0].as_f64()), U::from_f64(f[1].as_f64())]),
            provenance: self.provenance.clone(),
        }
    }

    /// Write as CSV with a header row at full (round-trip) precision.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "{},{}", self.labels[0], self.labels[1])?;
        for r in &self.rows {
            writeln!(w, "{},{}", r[0], r[1])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read a two-column CSV written by [`Dataset::write_csv`] (any header
    /// line is accepted and becomes the column labels).
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let reader = BufReader::new(std::fs::File::open(&path)?);
        let mut rows = Vec::new();
        let mut labels = ["y1".to_string(), "y2".to_string()];
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let a = parts.next().unwrap_or("").trim();
            let b = parts.next().ok_or(Error::Parse {
                line: lineno + 1,
                message: "expected two comma-separated columns".into(),
            })?;
            let b = b.trim();
            if lineno == 0 && a.parse::<f64>().is_err() {
                labels = [a.to_string(), b.to_string()];
                continue;
            }
            let parse = |s: &str| -> Result<T> {
                s.parse::<f64>().map(T::from_f64).map_err(|_| Error::Parse {
                    line: lineno + 1,
                    message: format!("invalid number `{s}`"),
                })
            };
            rows.push([parse(a)?, parse(b)?]);
        }
        if rows.is_empty() {
            return Err(Error::EmptyResult("CSV contained no data rows".into()));
        }
        let mut ds = Dataset::from_rows(rows)?;
        ds.labels = labels;
        Ok(ds)
    }
}
