//! Log-log rate fits on logged curves.

use std::path::Path;

use stable_bilevel::{Error, Result};

/// Fewest points a slope fit accepts.
pub const MIN_POINTS: usize = 10;

/// Least-squares slope of `ln v` against `ln k` over the pairs with
/// `lo <= k <= hi`. Every value in range must be positive.
pub fn fit_rate_slope(ks: &[f64], values: &[f64], lo: f64, hi: f64) -> Result<f64> {
    if ks.len() != values.len() {
        return Err(Error::Analysis(format!(
            "{} iteration counts but {} values",
            ks.len(),
            values.len()
        )));
    }
    let mut pts = Vec::new();
    for (&k, &v) in ks.iter().zip(values) {
        if k < lo || k > hi {
            continue;
        }
        if !(k > 0.0) || !(v > 0.0) || !v.is_finite() {
            return Err(Error::Analysis(format!(
                "non-positive or non-finite value {v} at k = {k}"
            )));
        }
        pts.push((k.ln(), v.ln()));
    }
    if pts.len() < MIN_POINTS {
        return Err(Error::Analysis(format!(
            "slope fit needs at least {MIN_POINTS} points in [{lo}, {hi}], found {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Analysis(
            "all points share one iteration count".into(),
        ));
    }
    Ok(sxy / sxx)
}

/// Running average `c_k = (v_1 + ... + v_k) / k`.
pub fn cesaro(values: &[f64]) -> Vec<f64> {
    let mut sum = 0.0;
    values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            sum += v;
            sum / (i + 1) as f64
        })
        .collect()
}

/// Reads the `k` column and the column `name` (or `name_mean`) of a CSV.
pub fn read_column(path: &Path, name: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Io(std::io::Error::other(e)))?
        .clone();
    let find = |n: &str| headers.iter().position(|h| h == n);
    let k_col =
        find("k").ok_or_else(|| Error::Analysis(format!("{}: no k column", path.display())))?;
    let v_col = find(name)
        .or_else(|| find(&format!("{name}_mean")))
        .ok_or_else(|| Error::Analysis(format!("{}: no column {name}", path.display())))?;
    let mut ks = Vec::new();
    let mut vs = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Io(std::io::Error::other(e)))?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| {
                    Error::Analysis(format!(
                        "{}: bad number on data row {}",
                        path.display(),
                        line + 1
                    ))
                })
        };
        ks.push(parse(k_col)?);
        vs.push(parse(v_col)?);
    }
    Ok((ks, vs))
}
