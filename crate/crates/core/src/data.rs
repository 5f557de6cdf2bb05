//! Sparse binary-classification datasets in LIBSVM text format.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use flate2::read::GzDecoder;
use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::stream;

/// Sparse feature vector with 0-based, strictly ascending indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRow {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseRow {
    pub fn new(indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::Data("indices and values differ in length".into()));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data("row indices must be strictly ascending".into()));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Data("row contains NaN".into()));
        }
        Ok(Self { indices, values })
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .copied()
            .zip(self.values.iter().copied())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Labeled examples with labels in `{-1, +1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    rows: Vec<SparseRow>,
    labels: Vec<f64>,
    dim: usize,
}

impl Dataset {
    pub fn new(rows: Vec<SparseRow>, labels: Vec<f64>, dim: usize) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&c| c != 1.0 && c != -1.0) {
            return Err(Error::Data(format!("label {bad} is not in {{-1, +1}}")));
        }
        if let Some(max) = rows.iter().filter_map(|r| r.indices.last()).max() {
            if *max >= dim {
                return Err(Error::Data(format!(
                    "feature index {max} out of range for dimension {dim}"
                )));
            }
        }
        Ok(Self { rows, labels, dim })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[SparseRow] {
        &self.rows
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Raises the feature dimension (absent trailing features).
    pub fn with_dim(mut self, dim: usize) -> Result<Self> {
        if dim < self.dim {
            return Err(Error::Configuration(format!(
                "cannot shrink feature dimension from {} to {dim}",
                self.dim
            )));
        }
        self.dim = dim;
        Ok(self)
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Self {
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            dim: self.dim,
        }
    }

    /// Uniform with-replacement draw of `batch` example indices.
    pub fn minibatch<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<usize> {
        sample_indices(self.len(), batch, rng)
    }
}

/// `batch` i.i.d. uniform indices in `0..n`.
pub fn sample_indices<R: Rng + ?Sized>(n: usize, batch: usize, rng: &mut R) -> Vec<usize> {
    assert!(n > 0, "cannot sample from an empty dataset");
    (0..batch).map(|_| rng.random_range(0..n)).collect()
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Parses LIBSVM text: one `label idx:val ...` example per line, 1-based
/// ascending indices, `#` starts a comment. Label sets `{0, 1}` and `{1, 2}`
/// are remapped to `{-1, +1}` with a warning.
pub fn parse_libsvm<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut raw_labels = Vec::new();
    let mut label_lines = Vec::new();
    let mut rows = Vec::new();
    let mut max_index: Option<usize> = None;

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let content = match line.find('#') {
            Some(pos) => &line[..pos],
            None => &line[..],
        };
        let mut tokens = content.split_whitespace();
        let Some(label_tok) = tokens.next() else {
            continue;
        };
        let label: f64 = label_tok
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad label {label_tok:?}")))?;
        if !label.is_finite() {
            return Err(parse_err(lineno, format!("non-finite label {label_tok:?}")));
        }
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for tok in tokens {
            let (i, v) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(lineno, format!("expected idx:val, got {tok:?}")))?;
            let i: usize = i
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad index in {tok:?}")))?;
            if i == 0 {
                return Err(parse_err(lineno, "feature indices are 1-based"));
            }
            let v: f64 = v
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad value in {tok:?}")))?;
            if v.is_nan() {
                return Err(parse_err(lineno, format!("NaN value in {tok:?}")));
            }
            let i = i - 1;
            if indices.last().is_some_and(|&last| i <= last) {
                return Err(parse_err(lineno, "indices must be strictly ascending"));
            }
            indices.push(i);
            values.push(v);
        }
        if let Some(&last) = indices.last() {
            max_index = Some(max_index.map_or(last, |m| m.max(last)));
        }
        raw_labels.push(label);
        label_lines.push(lineno);
        rows.push(SparseRow { indices, values });
    }

    let labels = normalize_labels(&raw_labels, &label_lines)?;
    let dim = max_index.map_or(0, |m| m + 1);
    Dataset::new(rows, labels, dim)
}

const SUPPORTED: [[i64; 2]; 3] = [[-1, 1], [0, 1], [1, 2]];

fn normalize_labels(raw: &[f64], lines: &[usize]) -> Result<Vec<f64>> {
    let distinct: BTreeSet<i64> = raw.iter().map(|&c| c as i64).collect();
    let integral = raw.iter().all(|&c| c.fract() == 0.0);
    let within = |set: &[i64]| integral && distinct.iter().all(|c| set.contains(c));
    if within(&[-1, 1]) {
        Ok(raw.to_vec())
    } else if within(&[0, 1]) {
        warn!("remapping labels {{0, 1}} to {{-1, +1}}");
        Ok(raw
            .iter()
            .map(|&c| if c == 0.0 { -1.0 } else { 1.0 })
            .collect())
    } else if within(&[1, 2]) {
        warn!("remapping labels {{1, 2}} to {{-1, +1}}");
        Ok(raw
            .iter()
            .map(|&c| if c == 1.0 { -1.0 } else { 1.0 })
            .collect())
    } else {
        // first line after which no supported set covers the labels seen
        let mut seen = BTreeSet::new();
        let line = raw
            .iter()
            .zip(lines)
            .find(|(&c, _)| {
                seen.insert(c as i64);
                c.fract() != 0.0
                    || !SUPPORTED
                        .iter()
                        .any(|set| seen.iter().all(|v| set.contains(v)))
            })
            .map_or(1, |(_, &l)| l);
        Err(parse_err(
            line,
            format!("unsupported label set {distinct:?}; expected a binary set"),
        ))
    }
}

/// Reads a LIBSVM file, decompressing it when the name ends in `.gz`.
pub fn load_libsvm(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    parse_libsvm(BufReader::new(reader))
}

/// LIBSVM text for `data`; `parse_libsvm` reads it back to an equal dataset
/// (up to trailing feature dimension).
pub fn serialize_libsvm(data: &Dataset) -> String {
    let mut out = String::new();
    for (row, &label) in data.rows.iter().zip(&data.labels) {
        let _ = write!(out, "{}", if label > 0.0 { "+1" } else { "-1" });
        for (i, v) in row.iter() {
            let _ = write!(out, " {}:{}", i + 1, v);
        }
        out.push('\n');
    }
    out
}

/// Seeded shuffle, then the first `round(n * val_fraction)` examples become
/// the validation set and the rest the training set.
pub fn split(data: &Dataset, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = data.len();
    if n < 2 {
        return Err(Error::Configuration(format!("cannot split {n} examples")));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Configuration(format!(
            "validation fraction must lie in (0, 1), got {val_fraction}"
        )));
    }
    let n_val = (n as f64 * val_fraction).round() as usize;
    if n_val == 0 || n_val == n {
        return Err(Error::Configuration(format!(
            "validation fraction {val_fraction} leaves an empty side for n = {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed));
    let (val, train) = order.split_at(n_val);
    Ok((data.subset(train), data.subset(val)))
}
