//! Dataset loading, scaling, delay embedding and splitting.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Task;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: cannot parse {value:?} as a number")]
    Parse { line: usize, value: String },
    #[error("line {line}: expected {expected} columns, found {got}")]
    Columns { line: usize, expected: usize, got: usize },
    #[error("dataset is empty")]
    Empty,
    #[error("series of length {len} is too short for embedding dimension {dim} and lag {lag}")]
    SeriesTooShort { len: usize, dim: usize, lag: usize },
    #[error("embedding dimension and lag must be at least 1 (got D={dim}, T={lag})")]
    BadEmbedding { dim: usize, lag: usize },
    #[error("label {label} on row {row} is outside 0..{classes}")]
    LabelOutOfRange { row: usize, label: usize, classes: usize },
    #[error("label {value} on row {row} is not a non-negative integer")]
    NonIntegerLabel { row: usize, value: f64 },
    #[error("{inputs} input rows but {targets} targets")]
    RowMismatch { inputs: usize, targets: usize },
    #[error("train fraction {0} is outside [0, 1]")]
    BadFraction(f64),
}

/// Regression targets or class labels.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Values(Array1<f64>),
    Labels { labels: Vec<usize>, classes: usize },
}

/// Inputs plus targets, with the target matrix used by the squared-error
/// gradient precomputed (`n x 1` values or `n x K` one-hot rows).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Array2<f64>,
    targets: Targets,
    target_matrix: Array2<f64>,
}

impl Dataset {
    pub fn regression(inputs: Array2<f64>, values: Array1<f64>) -> Result<Self, DataError> {
        if inputs.nrows() != values.len() {
            return Err(DataError::RowMismatch { inputs: inputs.nrows(), targets: values.len() });
        }
        let target_matrix = values.clone().insert_axis(Axis(1));
        Ok(Self { inputs, targets: Targets::Values(values), target_matrix })
    }

    pub fn classification(inputs: Array2<f64>, labels: Vec<usize>, classes: usize) -> Result<Self, DataError> {
        if inputs.nrows() != labels.len() {
            return Err(DataError::RowMismatch { inputs: inputs.nrows(), targets: labels.len() });
        }
        let target_matrix = one_hot(&labels, classes)?;
        Ok(Self { inputs, targets: Targets::Labels { labels, classes }, target_matrix })
    }

    pub fn inputs(&self) -> &Array2<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn target_matrix(&self) -> &Array2<f64> {
        &self.target_matrix
    }

    pub fn values(&self) -> Option<&Array1<f64>> {
        match &self.targets {
            Targets::Values(v) => Some(v),
            Targets::Labels { .. } => None,
        }
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Labels { labels, .. } => Some(labels),
            Targets::Values(_) => None,
        }
    }

    pub fn task(&self) -> Task {
        match self.targets {
            Targets::Values(_) => Task::Regression,
            Targets::Labels { .. } => Task::Classification,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn features(&self) -> usize {
        self.inputs.ncols()
    }

    /// Rows selected by `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let inputs = self.inputs.select(Axis(0), idx);
        let target_matrix = self.target_matrix.select(Axis(0), idx);
        let targets = match &self.targets {
            Targets::Values(v) => Targets::Values(v.select(Axis(0), idx)),
            Targets::Labels { labels, classes } => {
                Targets::Labels { labels: idx.iter().map(|&i| labels[i]).collect(), classes: *classes }
            }
        };
        Self { inputs, targets, target_matrix }
    }
}

/// Delay-embedded time series: each row holds the `dim` values preceding its target.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedDataset {
    pub inputs: Array2<f64>,
    pub targets: Array1<f64>,
    pub dim: usize,
    pub lag: usize,
    /// 1-based position of each target in the source series.
    pub positions: Vec<usize>,
}

impl EmbeddedDataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn into_dataset(self) -> Dataset {
        Dataset::regression(self.inputs, self.targets).expect("embedding rows and targets agree")
    }
}

/// Reconstruct a scalar series into state-space rows.
///
/// Targets are taken at every 1-based `t > dim` with `(t - (dim + 1)) % lag == 0`;
/// the inputs for `t` are `(y[t-1], ..., y[t-dim])`.
pub fn takens_embed(series: &[f64], dim: usize, lag: usize) -> Result<EmbeddedDataset, DataError> {
    if dim == 0 || lag == 0 {
        return Err(DataError::BadEmbedding { dim, lag });
    }
    if series.len() <= dim {
        return Err(DataError::SeriesTooShort { len: series.len(), dim, lag });
    }
    let positions: Vec<usize> = (dim + 1..=series.len()).step_by(lag).collect();
    let mut inputs = Array2::zeros((positions.len(), dim));
    let mut targets = Array1::zeros(positions.len());
    for (row, &t) in positions.iter().enumerate() {
        // y_t is series[t - 1]
        targets[row] = series[t - 1];
        for k in 1..=dim {
            inputs[[row, k - 1]] = series[t - 1 - k];
        }
    }
    Ok(EmbeddedDataset { inputs, targets, dim, lag, positions })
}

/// Affine map from the observed range onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scale {
    pub min: f64,
    pub max: f64,
    /// The observed range was empty; every value maps to 0.5.
    pub degenerate: bool,
}

impl Scale {
    pub fn fit(values: &[f64]) -> Self {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self { min, max, degenerate: max <= min }
    }

    pub fn apply(&self, v: f64) -> f64 {
        if self.degenerate {
            0.5
        } else {
            (v - self.min) / (self.max - self.min)
        }
    }

    pub fn invert(&self, s: f64) -> f64 {
        if self.degenerate {
            self.min
        } else {
            self.min + s * (self.max - self.min)
        }
    }
}

pub fn minmax_scale(values: &[f64]) -> (Vec<f64>, Scale) {
    let scale = Scale::fit(values);
    (values.iter().map(|&v| scale.apply(v)).collect(), scale)
}

/// Scale every column of `features` independently onto `[0, 1]`.
pub fn scale_columns(features: &Array2<f64>) -> (Array2<f64>, Vec<Scale>) {
    let mut out = features.clone();
    let mut scales = Vec::with_capacity(features.ncols());
    for mut col in out.columns_mut() {
        let values: Vec<f64> = col.iter().copied().collect();
        let scale = Scale::fit(&values);
        col.mapv_inplace(|v| scale.apply(v));
        scales.push(scale);
    }
    (out, scales)
}

/// Row assignment rule for [`train_test_split`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    /// First rows train, rest test.
    Chronological,
    /// Seeded permutation before cutting.
    Shuffled { seed: u64 },
}

pub fn train_test_split(data: &Dataset, train_fraction: f64, split: Split) -> Result<(Dataset, Dataset), DataError> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(DataError::BadFraction(train_fraction));
    }
    let n = data.len();
    let n_train = (train_fraction * n as f64).floor() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    if let Split::Shuffled { seed } = split {
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    if n_train == n {
        log::warn!("train fraction {train_fraction} leaves no test rows");
    }
    Ok((data.select(&idx[..n_train]), data.select(&idx[n_train..])))
}

/// Numeric table read from text: every column but the last, and the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub features: Array2<f64>,
    pub target: Vec<f64>,
}

/// Parse comma- or whitespace-delimited numeric text. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_table(text: &str) -> Result<Table, DataError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .map(|f| f.parse::<f64>().map_err(|_| DataError::Parse { line: lineno, value: f.to_string() }))
            .collect::<Result<Vec<_>, _>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(DataError::Columns { line: lineno, expected: w, got: row.len() })
            }
            _ => {}
        }
        rows.push(row);
    }
    let width = width.ok_or(DataError::Empty)?;
    let n = rows.len();
    let mut features = Array2::zeros((n, width - 1));
    let mut target = Vec::with_capacity(n);
    for (r, row) in rows.into_iter().enumerate() {
        for (c, v) in row[..width - 1].iter().enumerate() {
            features[[r, c]] = *v;
        }
        target.push(row[width - 1]);
    }
    Ok(Table { features, target })
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Table, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    parse_table(&text)
}

/// Convert a numeric target column to class indices.
pub fn labels_from_column(column: &[f64]) -> Result<Vec<usize>, DataError> {
    column
        .iter()
        .enumerate()
        .map(|(row, &v)| {
            if v >= 0.0 && v.fract() == 0.0 && v.is_finite() {
                Ok(v as usize)
            } else {
                Err(DataError::NonIntegerLabel { row, value: v })
            }
        })
        .collect()
}

pub fn one_hot(labels: &[usize], classes: usize) -> Result<Array2<f64>, DataError> {
    let mut out = Array2::zeros((labels.len(), classes));
    for (row, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(DataError::LabelOutOfRange { row, label, classes });
        }
        out[[row, label]] = 1.0;
    }
    Ok(out)
}

/// Classification data with features scaled per column onto `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationDataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl ClassificationDataset {
    pub fn from_table(table: Table, classes: usize) -> Result<Self, DataError> {
        let labels = labels_from_column(&table.target)?;
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(DataError::LabelOutOfRange { row, label, classes });
        }
        let (features, _) = scale_columns(&table.features);
        Ok(Self { features, labels, classes })
    }

    pub fn into_dataset(self) -> Dataset {
        Dataset::classification(self.features, self.labels, self.classes).expect("labels validated")
    }
}
