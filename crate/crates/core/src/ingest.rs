//! Loading event streams and value series from CSV, plus the preprocessing
//! transforms applied before modeling.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

/// Offset applied per repeat when an arrival time duplicates its predecessor.
pub const DUPLICATE_SHIFT: f64 = 1e-9;

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input)
}

/// Parses rows into numbers, skipping a non-numeric first row as a header.
fn numeric_rows<R: Read>(
    input: R,
    column: usize,
    min_columns: usize,
) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut rows = Vec::new();
    for (i, record) in reader(input).records().enumerate() {
        let record = record?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let line = record.position().map_or(i + 1, |p| p.line() as usize);
        if record.len() < min_columns {
            return Err(Error::Data(format!(
                "line {line}: expected {min_columns} column(s), found {}",
                record.len()
            )));
        }
        let parsed: std::result::Result<Vec<f64>, _> = record
            .iter()
            .take(column + 1)
            .map(|f| f.parse::<f64>())
            .collect();
        match parsed {
            Ok(values) => rows.push((line, values)),
            Err(_) if rows.is_empty() && i == 0 => continue,
            Err(e) => return Err(Error::Data(format!("line {line}: {e}"))),
        }
    }
    Ok(rows)
}

/// Arrival times from a single-column CSV.
///
/// Repeated times are nudged forward by `k · 1e-9` for the `k`-th repeat; any
/// other decrease is an error.
pub fn read_events<R: Read>(input: R) -> Result<Vec<f64>> {
    let rows = numeric_rows(input, 0, 1)?;
    let mut times: Vec<f64> = Vec::with_capacity(rows.len());
    let mut repeats = 0usize;
    let mut base = f64::NEG_INFINITY;
    for (line, values) in rows {
        let t = values[0];
        if !t.is_finite() {
            return Err(Error::Data(format!("line {line}: non-finite time {t}")));
        }
        if t == base {
            repeats += 1;
            let shifted = t + repeats as f64 * DUPLICATE_SHIFT;
            log::warn!("line {line}: duplicate time {t} shifted to {shifted}");
            times.push(shifted);
            continue;
        }
        let last = times.last().copied().unwrap_or(f64::NEG_INFINITY);
        if t <= last {
            return Err(Error::Data(format!(
                "line {line}: time {t} does not exceed previous {last}"
            )));
        }
        base = t;
        repeats = 0;
        times.push(t);
    }
    Ok(times)
}

pub fn load_events(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    read_events(std::fs::File::open(path)?)
}

/// A value series with optional timestamps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawSeries {
    pub timestamps: Option<Vec<f64>>,
    pub values: Vec<f64>,
}

/// Two-column `(timestamp or index, value)` CSV; a single column is read as values.
pub fn read_series<R: Read>(input: R) -> Result<RawSeries> {
    let rows = numeric_rows(input, 1, 1)?;
    let two = rows.first().is_some_and(|(_, v)| v.len() >= 2);
    let mut series = RawSeries {
        timestamps: two.then(Vec::new),
        values: Vec::with_capacity(rows.len()),
    };
    for (line, values) in rows {
        if (values.len() >= 2) != two {
            return Err(Error::Data(format!(
                "line {line}: inconsistent column count"
            )));
        }
        let v = *values.last().expect("non-empty row");
        if !v.is_finite() {
            return Err(Error::Data(format!("line {line}: non-finite value {v}")));
        }
        if let Some(ts) = series.timestamps.as_mut() {
            if ts.last().is_some_and(|&prev| values[0] <= prev) {
                return Err(Error::Data(format!(
                    "line {line}: timestamps must increase"
                )));
            }
            ts.push(values[0]);
        }
        series.values.push(v);
    }
    Ok(series)
}

pub fn load_series(path: impl AsRef<Path>) -> Result<RawSeries> {
    read_series(std::fs::File::open(path)?)
}

/// Trailing mean over the last `min(window, i + 1)` points.
pub fn rolling_average(values: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::Config("rolling window must be at least 1".into()));
    }
    let out = (0..values.len())
        .map(|i| {
            let window = &values[(i + 1).saturating_sub(window)..=i];
            window.iter().sum::<f64>() / window.len() as f64
        })
        .collect();
    Ok(out)
}

/// Affine map to zero mean and unit population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Standardization {
    pub mean: f64,
    pub sd: f64,
}

impl Standardization {
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.sd
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.sd + self.mean
    }
}

pub fn standardize(values: &[f64]) -> Result<(Vec<f64>, Standardization)> {
    if values.len() < 2 {
        return Err(Error::Data(
            "standardization needs at least two values".into(),
        ));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(sd > 0.0) {
        return Err(Error::Data("cannot standardize a constant series".into()));
    }
    let t = Standardization { mean, sd };
    Ok((values.iter().map(|&v| t.apply(v)).collect(), t))
}
