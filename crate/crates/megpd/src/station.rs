//! Ingestion of daily precipitation series and pairwise preprocessing into
//! model-ready datasets.
//!
//! Two input layouts are supported: the European climate archive's daily
//! precipitation files (free-text preamble, then
//! `STAID, SOUID, DATE, RR, Q_RR` rows with RR in tenths of a millimetre,
//! -9999 as the missing sentinel, and quality flag 0 = valid / 1 = suspect /
//! 9 = missing) and a plain `date,value_mm` CSV.
//!
//! Pair preprocessing joins two series on date, keeps fall-winter days in a
//! season-year window where both stations report strictly positive rain, and
//! optionally rescales each column by its empirical standard deviation
//! (computed on the retained rows).

use crate::dataset::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::stats;
use chrono::{Datelike, NaiveDate};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

/// One station's daily series. Missing observations are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationSeries {
    pub station_id: String,
    pub dates: Vec<NaiveDate>,
    pub values_mm: Vec<Option<f64>>,
    pub warnings: Vec<String>,
}

impl StationSeries {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StationFormat {
    /// European climate archive daily RR layout.
    EcaD,
    /// `date,value_mm` rows, optional header.
    Plain,
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    /// Treat suspect-quality rows (flag 1) as missing.
    pub drop_suspect: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { drop_suspect: true }
    }
}

pub fn load_station_csv(path: impl AsRef<Path>, format: StationFormat) -> Result<StationSeries> {
    load_station_csv_with(path, format, &LoadOptions::default())
}

pub fn load_station_csv_with(
    path: impl AsRef<Path>,
    format: StationFormat,
    opts: &LoadOptions,
) -> Result<StationSeries> {
    let path = path.as_ref();
    let reader = BufReader::new(std::fs::File::open(path)?);
    let fallback_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "station".into());

    let mut station_id = fallback_id;
    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut values: Vec<Option<f64>> = Vec::new();
    let mut in_body = format == StationFormat::Plain;

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        match format {
            StationFormat::EcaD => {
                let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
                if !in_body {
                    if fields.first().map(|f| f.eq_ignore_ascii_case("STAID")) == Some(true) {
                        in_body = true;
                    }
                    continue;
                }
                if fields.len() < 5 {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("expected 5 fields STAID,SOUID,DATE,RR,Q_RR, got {}", fields.len()),
                    });
                }
                station_id = fields[0].to_string();
                let date = parse_yyyymmdd(fields[2]).ok_or(Error::Parse {
                    line: lineno,
                    message: format!("invalid date `{}`", fields[2]),
                })?;
                let rr: i64 = fields[3].parse().map_err(|_| Error::Parse {
                    line: lineno,
                    message: format!("invalid precipitation value `{}`", fields[3]),
                })?;
                let flag: i64 = fields[4].parse().map_err(|_| Error::Parse {
                    line: lineno,
                    message: format!("invalid quality flag `{}`", fields[4]),
                })?;
                let value = if rr == -9999 || flag == 9 || (opts.drop_suspect && flag == 1) {
                    None
                } else {
                    Some(rr as f64 / 10.0)
                };
                push_row(&mut dates, &mut values, date, value, lineno)?;
            }
            StationFormat::Plain => {
                let mut parts = trimmed.split(',').map(str::trim);
                let date_str = parts.next().unwrap_or("");
                let value_str = parts.next().ok_or(Error::Parse {
                    line: lineno,
                    message: "expected `date,value_mm`".into(),
                })?;
                if lineno == 1 && NaiveDate::parse_from_str(date_str, "%Y-%m-%d").is_err() {
                    continue; // header
                }
                let date =
                    NaiveDate::parse_from_str(date_str, "%Y-%m-%d").map_err(|_| Error::Parse {
                        line: lineno,
                        message: format!("invalid date `{date_str}` (expected YYYY-MM-DD)"),
                    })?;
                let value = if value_str.is_empty() || value_str.eq_ignore_ascii_case("na") {
                    None
                } else {
                    Some(value_str.parse::<f64>().map_err(|_| Error::Parse {
                        line: lineno,
                        message: format!("invalid value `{value_str}`"),
                    })?)
                };
                push_row(&mut dates, &mut values, date, value, lineno)?;
            }
        }
    }

    if dates.is_empty() {
        return Err(Error::EmptyResult("no station rows parsed".into()));
    }

    let mut warnings = Vec::new();
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if !present.is_empty() {
        let extreme = present.iter().filter(|&&v| v > 500.0).count();
        if extreme as f64 > 0.01 * present.len() as f64 {
            warnings.push(format!(
                "{extreme} of {} daily values exceed 500 mm; check units",
                present.len()
            ));
        }
        if present.iter().any(|&v| v < 0.0) {
            warnings.push("negative precipitation values present".into());
        }
    }

    Ok(StationSeries {
        station_id,
        dates,
        values_mm: values,
        warnings,
    })
}

fn push_row(
    dates: &mut Vec<NaiveDate>,
    values: &mut Vec<Option<f64>>,
    date: NaiveDate,
    value: Option<f64>,
    lineno: usize,
) -> Result<()> {
    if let Some(&last) = dates.last() {
        if date <= last {
            return Err(Error::Parse {
                line: lineno,
                message: format!("dates must be strictly increasing ({last} then {date})"),
            });
        }
    }
    dates.push(date);
    values.push(value);
    Ok(())
}

fn parse_yyyymmdd(s: &str) -> Option<NaiveDate> {
    if s.len() != 8 || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let y: i32 = s[0..4].parse().ok()?;
    let m: u32 = s[4..6].parse().ok()?;
    let d: u32 = s[6..8].parse().ok()?;
    NaiveDate::from_ymd_opt(y, m, d)
}

/// The season year of a date: October-December belong to the following
/// calendar year's season, January-February to their own.
pub fn season_year(date: NaiveDate) -> i32 {
    if date.month() >= 10 {
        date.year() + 1
    } else {
        date.year()
    }
}

#[derive(Debug, Clone)]
pub struct PairOptions {
    /// Calendar months retained (default October through February).
    pub months: Vec<u32>,
    /// Inclusive season-year window. Season year `s` spans October of
    /// `s - 1` through the spring of `s`.
    pub season_years: (i32, i32),
    /// Divide each column by its empirical standard deviation.
    pub scale: bool,
}

impl Default for PairOptions {
    fn default() -> Self {
        PairOptions {
            months: vec![10, 11, 12, 1, 2],
            season_years: (1999, 2024),
            scale: true,
        }
    }
}

/// Join two station series into a strictly positive bivariate dataset.
///
/// A date is retained when it falls in the requested months and season-year
/// window and both stations report a strictly positive value; a zero-rain or
/// missing day at either station drops the pair.
pub fn make_pair_dataset(
    a: &StationSeries,
    b: &StationSeries,
    opts: &PairOptions,
) -> Result<Dataset<f64>> {
    let in_window = |d: NaiveDate| -> bool {
        opts.months.contains(&d.month())
            && (opts.season_years.0..=opts.season_years.1).contains(&season_year(d))
    };
    let index: BTreeMap<NaiveDate, f64> = b
        .dates
        .iter()
        .zip(&b.values_mm)
        .filter_map(|(&d, v)| v.map(|v| (d, v)))
        .collect();

    let mut rows: Vec<[f64; 2]> = Vec::new();
    let mut positive_a = 0usize;
    let mut positive_b_window = 0usize;
    let mut dropped_zero_or_missing = 0usize;
    for (&d, va) in a.dates.iter().zip(&a.values_mm) {
        if !in_window(d) {
            continue;
        }
        if let Some(&v) = va.as_ref() {
            if v > 0.0 {
                positive_a += 1;
            }
        }
        match (va, index.get(&d)) {
            (Some(va), Some(&vb)) if *va > 0.0 && vb > 0.0 => rows.push([*va, vb]),
            _ => dropped_zero_or_missing += 1,
        }
    }
    for (&d, vb) in b.dates.iter().zip(&b.values_mm) {
        if in_window(d) {
            if let Some(&v) = vb.as_ref() {
                if v > 0.0 {
                    positive_b_window += 1;
                }
            }
        }
    }

    if rows.is_empty() {
        return Err(Error::EmptyResult(
            "no overlapping positive-rain days in the requested window".into(),
        ));
    }

    let mut dataset = Dataset::from_rows(rows)?;
    dataset.labels = [a.station_id.clone(), b.station_id.clone()];
    if opts.scale {
        let n = dataset.n();
        let mut factors = [0.0f64; 2];
        let mut scaled = Vec::with_capacity(n);
        let col0 = dataset.column(0);
        let col1 = dataset.column(1);
        factors[0] = stats::sample_sd(&col0);
        factors[1] = stats::sample_sd(&col1);
        if factors.iter().any(|&f| !(f > 0.0)) {
            return Err(Error::DegenerateData(
                "a column is constant; cannot standardize".into(),
            ));
        }
        for i in 0..n {
            scaled.push([col0[i] / factors[0], col1[i] / factors[1]]);
        }
        let labels = dataset.labels.clone();
        dataset = Dataset::from_rows(scaled)?;
        dataset.labels = labels;
        dataset.scaling_factors = Some(factors);
    }

    dataset.provenance = Some(Provenance {
        sources: vec![a.station_id.clone(), b.station_id.clone()],
        filters: vec![
            format!("months {:?}", opts.months),
            format!(
                "season years {}..={}",
                opts.season_years.0, opts.season_years.1
            ),
            "both stations strictly positive".into(),
            if opts.scale {
                "columns scaled by sample standard deviation".into()
            } else {
                "unscaled".into()
            },
        ],
        counts: vec![
            (
                format!("station {} positive days in window", a.station_id),
                positive_a,
            ),
            (
                format!("station {} positive days in window", b.station_id),
                positive_b_window,
            ),
            ("retained pairs".into(), dataset.n()),
            ("dropped (zero or missing)".into(), dropped_zero_or_missing),
        ],
        notes: vec![],
    });
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fmt::Write as _;

    fn plain_file(dir: &tempfile::TempDir, name: &str, rows: &[(&str, &str)]) -> std::path::PathBuf {
        let mut s = String::from("date,value_mm\n");
        for (d, v) in rows {
            writeln!(s, "{d},{v}").unwrap();
        }
        let path = dir.path().join(name);
        std::fs::write(&path, s).unwrap();
        path
    }

    #[test]
    fn plain_csv_parses_values_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let path = plain_file(
            &dir,
            "a.csv",
            &[("2001-12-03", "4.2"), ("2001-12-04", "NA"), ("2001-12-05", "0.0")],
        );
        let s = load_station_csv(&path, StationFormat::Plain).unwrap();
        assert_eq!(s.station_id, "a");
        assert_eq!(s.values_mm[0], Some(4.2));
        assert_eq!(s.values_mm[1], None);
        assert_eq!(s.values_mm[2], Some(0.0));
    }

    #[test]
    fn ecad_layout_units_and_sentinels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("RR_STAID002357.txt");
        std::fs::write(
            &path,
            "EUROPEAN CLIMATE ASSESSMENT & DATASET (ECA&D)\n\
             daily precipitation amount RR in 0.1 mm\n\
             \n\
             STAID, SOUID,    DATE,   RR, Q_RR\n\
             2357,100860,19991001,   42,    0\n\
             2357,100860,19991002,-9999,    9\n\
             2357,100860,19991003,   17,    1\n\
             2357,100860,19991004,    0,    0\n",
        )
        .unwrap();
        let s = load_station_csv(&path, StationFormat::EcaD).unwrap();
        assert_eq!(s.station_id, "2357");
        assert_eq!(s.values_mm[0], Some(4.2)); // 42 tenths of a millimetre
        assert_eq!(s.values_mm[1], None); // sentinel
        assert_eq!(s.values_mm[2], None); // suspect dropped by default
        assert_eq!(s.values_mm[3], Some(0.0));

        let kept = load_station_csv_with(
            &path,
            StationFormat::EcaD,
            &LoadOptions { drop_suspect: false },
        )
        .unwrap();
        assert_eq!(kept.values_mm[2], Some(1.7));
    }

    #[test]
    fn non_increasing_dates_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = plain_file(&dir, "bad.csv", &[("2001-01-02", "1.0"), ("2001-01-01", "2.0")]);
        assert!(matches!(
            load_station_csv(&path, StationFormat::Plain),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn unit_sanity_warning() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<(String, String)> = (1..=28)
            .map(|d| (format!("2001-01-{d:02}"), "900.0".to_string()))
            .collect();
        let rows_ref: Vec<(&str, &str)> =
            rows.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let path = plain_file(&dir, "big.csv", &rows_ref);
        let s = load_station_csv(&path, StationFormat::Plain).unwrap();
        assert!(!s.warnings.is_empty());
    }

    fn series(id: &str, rows: &[(NaiveDate, Option<f64>)]) -> StationSeries {
        StationSeries {
            station_id: id.into(),
            dates: rows.iter().map(|r| r.0).collect(),
            values_mm: rows.iter().map(|r| r.1).collect(),
            warnings: vec![],
        }
    }

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    #[test]
    fn season_year_attribution() {
        assert_eq!(season_year(d(1999, 10, 1)), 2000);
        assert_eq!(season_year(d(1999, 12, 31)), 2000);
        assert_eq!(season_year(d(2000, 1, 1)), 2000);
        assert_eq!(season_year(d(2000, 2, 29)), 2000);
    }

    #[test]
    fn identical_series_join_to_equal_columns() {
        let rows: Vec<(NaiveDate, Option<f64>)> = (1..=20)
            .map(|i| (d(2001, 11, i), Some(i as f64 * 0.5)))
            .collect();
        let a = series("x", &rows);
        let b = series("y", &rows);
        let ds = make_pair_dataset(
            &a,
            &b,
            &PairOptions {
                scale: false,
                season_years: (2002, 2002),
                ..PairOptions::default()
            },
        )
        .unwrap();
        assert_eq!(ds.n(), 20);
        for r in ds.rows() {
            assert_eq!(r[0], r[1]);
        }
        assert_eq!(ds.labels, ["x".to_string(), "y".to_string()]);
    }

    #[test]
    fn zero_or_missing_at_either_station_drops_the_pair() {
        let a = series(
            "a",
            &[
                (d(2001, 11, 1), Some(1.0)),
                (d(2001, 11, 2), Some(0.0)),
                (d(2001, 11, 3), Some(2.0)),
                (d(2001, 11, 4), None),
                (d(2001, 11, 5), Some(3.0)),
            ],
        );
        let b = series(
            "b",
            &[
                (d(2001, 11, 1), Some(1.5)),
                (d(2001, 11, 2), Some(2.5)),
                (d(2001, 11, 3), Some(0.0)),
                (d(2001, 11, 4), Some(1.0)),
                (d(2001, 11, 5), Some(0.7)),
            ],
        );
        let ds = make_pair_dataset(
            &a,
            &b,
            &PairOptions {
                scale: false,
                season_years: (2002, 2002),
                ..PairOptions::default()
            },
        )
        .unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.rows()[0], [1.0, 1.5]);
        assert_eq!(ds.rows()[1], [3.0, 0.7]);
        let prov = ds.provenance.as_ref().unwrap();
        assert!(prov.counts.iter().any(|(k, v)| k.contains("dropped") && *v == 3));
    }

    #[test]
    fn scaling_normalizes_sd_and_round_trips() {
        let rows_a: Vec<(NaiveDate, Option<f64>)> = (1..=30)
            .map(|i| (d(2001, 12, i), Some(0.3 * i as f64)))
            .collect();
        let rows_b: Vec<(NaiveDate, Option<f64>)> = (1..=30)
            .map(|i| (d(2001, 12, i), Some(1.0 + (i % 7) as f64)))
            .collect();
        let a = series("a", &rows_a);
        let b = series("b", &rows_b);
        let ds = make_pair_dataset(
            &a,
            &b,
            &PairOptions {
                season_years: (2002, 2002),
                ..PairOptions::default()
            },
        )
        .unwrap();
        for j in 0..2 {
            let sd = stats::sample_sd(&ds.column(j));
            assert!((sd - 1.0).abs() < 1e-12, "column {j} sd {sd}");
        }
        // Multiplying back by the factors reproduces the raw values to a
        // rounding (divide-then-multiply costs at most one ulp each way).
        let f = ds.scaling_factors.unwrap();
        for (i, r) in ds.rows().iter().enumerate() {
            let raw = [r[0] * f[0], r[1] * f[1]];
            let orig = [rows_a[i].1.unwrap(), rows_b[i].1.unwrap()];
            for j in 0..2 {
                assert!(
                    (raw[j] - orig[j]).abs() <= 2.0 * f64::EPSILON * orig[j].abs(),
                    "{} vs {}",
                    raw[j],
                    orig[j]
                );
            }
        }
    }

    #[test]
    fn preprocessing_is_idempotent() {
        // A dataset that is already positive and unscaled passes through
        // unchanged when run through the same filter again.
        let rows: Vec<(NaiveDate, Option<f64>)> = (1..=25)
            .map(|i| (d(2002, 1, i), Some(0.1 + i as f64)))
            .collect();
        let a = series("a", &rows);
        let b = series("b", &rows);
        let opts = PairOptions {
            scale: false,
            season_years: (2002, 2002),
            ..PairOptions::default()
        };
        let once = make_pair_dataset(&a, &b, &opts).unwrap();
        let again_a = series(
            "a",
            &once
                .rows()
                .iter()
                .enumerate()
                .map(|(i, r)| (rows[i].0, Some(r[0])))
                .collect::<Vec<_>>(),
        );
        let again_b = series(
            "b",
            &once
                .rows()
                .iter()
                .enumerate()
                .map(|(i, r)| (rows[i].0, Some(r[1])))
                .collect::<Vec<_>>(),
        );
        let twice = make_pair_dataset(&again_a, &again_b, &opts).unwrap();
        assert_eq!(once.rows(), twice.rows());
    }

    #[test]
    fn months_window_spans_year_boundary() {
        let rows: Vec<(NaiveDate, Option<f64>)> = vec![
            (d(1999, 9, 30), Some(1.0)),  // September: excluded
            (d(1999, 10, 1), Some(1.0)),  // season 2000
            (d(2000, 1, 15), Some(1.0)),  // season 2000
            (d(2000, 3, 1), Some(1.0)),   // March: excluded
            (d(2000, 10, 5), Some(1.0)),  // season 2001: outside window below
        ];
        let a = series("a", &rows);
        let b = series("b", &rows);
        let ds = make_pair_dataset(
            &a,
            &b,
            &PairOptions {
                scale: false,
                season_years: (2000, 2000),
                ..PairOptions::default()
            },
        )
        .unwrap();
        assert_eq!(ds.n(), 2);
    }

    #[test]
    fn empty_window_is_an_error() {
        let rows = vec![(d(2001, 6, 1), Some(1.0))];
        let a = series("a", &rows);
        let b = series("b", &rows);
        assert!(matches!(
            make_pair_dataset(&a, &b, &PairOptions::default()),
            Err(Error::EmptyResult(_))
        ));
    }
}
