//! Dataset construction (synthetic or CSV), noisy-copy banks, and contiguous
//! mini-batch partitions.
//!
//! A noisy copy is the pair `(X + U_k, y)`: noise goes into the inputs only,
//! the outputs are repeated verbatim. Per-element noise sd is `tau / sqrt(n)`
//! throughout. Off-line banks draw each `U_k` once and reuse it at every
//! epoch; on-line banks redraw `U_{t,k}` per epoch as a pure function of
//! `(t, k)`, so trajectories are replayable.

use std::borrow::Cow;
use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::numkit::{gauss_mat, GaussSource, Mat, NumError, Vector};

// Stream labels for deriving noise streams from a run seed.
const TAG_SYNTH_X: u64 = 0x01;
const TAG_SYNTH_EPS: u64 = 0x02;
const TAG_OFFLINE: u64 = 0x03;
const TAG_ONLINE: u64 = 0x04;

/// Errors from dataset construction and ingestion.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("row {row}, column {col}: cannot parse {cell:?} as a finite number")]
    Parse {
        row: usize,
        col: usize,
        cell: String,
    },
    #[error("row {row}: expected {expected} cells, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("target column {name:?} not found in header")]
    MissingTarget { name: String },
    #[error("no data rows after the header")]
    EmptyData,
    #[error("column {index} is constant; cannot standardize")]
    ConstantColumn { index: usize },
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// The original data `(X, y)`: `n` samples, `m` input variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Mat,
    y: Vector,
}

impl Dataset {
    pub fn new(x: Mat, y: Vector) -> Result<Self, DataError> {
        if x.rows() != y.len() {
            return Err(DataError::Param(format!(
                "X has {} rows but y has {} entries",
                x.rows(),
                y.len()
            )));
        }
        if x.rows() == 0 || x.cols() == 0 {
            return Err(DataError::Param(
                "dataset must have n >= 1 and m >= 1".into(),
            ));
        }
        if !x.is_finite() || !y.is_finite() {
            return Err(DataError::Param("dataset entries must be finite".into()));
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> &Mat {
        &self.x
    }

    pub fn y(&self) -> &Vector {
        &self.y
    }

    /// Number of samples.
    pub fn n(&self) -> usize {
        self.x.rows()
    }

    /// Number of input variables.
    pub fn m(&self) -> usize {
        self.x.cols()
    }
}

/// Synthetic regression: inputs i.i.d. `N(0, sigma_x^2)`, response
/// `y_i = x_i1 - x_i2 + eps_i` with `eps_i ~ N(0, sigma^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub m: usize,
    pub sigma_x: f64,
    pub sigma: f64,
    pub seed: u64,
}

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset, DataError> {
    if spec.m < 2 {
        return Err(DataError::Param(format!(
            "synthetic model uses the first two inputs; m must be >= 2, got {}",
            spec.m
        )));
    }
    if spec.sigma_x <= 0.0 || spec.sigma_x.is_nan() {
        return Err(DataError::Param(format!(
            "sigma_x must be > 0, got {}",
            spec.sigma_x
        )));
    }
    if spec.sigma < 0.0 || spec.sigma.is_nan() {
        return Err(DataError::Param(format!(
            "sigma must be >= 0, got {}",
            spec.sigma
        )));
    }
    let base = GaussSource::new(spec.seed, 0);
    let x = gauss_mat(
        &base.substream(&[TAG_SYNTH_X]),
        spec.n,
        spec.m,
        spec.sigma_x,
    )?;
    let eps = gauss_mat(&base.substream(&[TAG_SYNTH_EPS]), spec.n, 1, spec.sigma)?;
    let mut y = vec![0.0; spec.n];
    for (i, yi) in y.iter_mut().enumerate() {
        *yi = x.get(i, 0) - x.get(i, 1) + eps.get(i, 0);
    }
    Dataset::new(x, Vector::new(y))
}

/// Load a dataset from CSV: UTF-8, first row header, comma-separated,
/// decimal point, no quoting. The named column becomes `y`; the remaining
/// columns become `X` in file order.
pub fn load_csv(path: &Path, target: &str) -> Result<Dataset, DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut lines = text.lines();
    let header: Vec<&str> = match lines.next() {
        Some(h) => h.split(',').map(str::trim).collect(),
        None => return Err(DataError::EmptyData),
    };
    let target_idx =
        header
            .iter()
            .position(|h| *h == target)
            .ok_or_else(|| DataError::MissingTarget {
                name: target.to_string(),
            })?;

    let mut xdata: Vec<f64> = Vec::new();
    let mut ydata: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = lineno + 2; // 1-based, header is row 1
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != header.len() {
            return Err(DataError::RaggedRow {
                row,
                expected: header.len(),
                found: cells.len(),
            });
        }
        for (j, cell) in cells.iter().enumerate() {
            let value: f64 = cell.parse().map_err(|_| DataError::Parse {
                row,
                col: j + 1,
                cell: (*cell).to_string(),
            })?;
            if !value.is_finite() {
                return Err(DataError::Parse {
                    row,
                    col: j + 1,
                    cell: (*cell).to_string(),
                });
            }
            if j == target_idx {
                ydata.push(value);
            } else {
                xdata.push(value);
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(DataError::EmptyData);
    }
    let x = Mat::new(rows, header.len() - 1, xdata)?;
    Dataset::new(x, Vector::new(ydata))
}

/// Column-wise standardization of `X` to mean 0 and standard deviation 1
/// under the population (divide-by-n) convention; `y` is untouched.
pub fn standardize(d: &Dataset) -> Result<Dataset, DataError> {
    let (n, m) = (d.n(), d.m());
    let mut out = Mat::zeros(n, m);
    for j in 0..m {
        let mean = (0..n).map(|i| d.x.get(i, j)).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (d.x.get(i, j) - mean).powi(2)).sum::<f64>() / n as f64;
        if var == 0.0 {
            return Err(DataError::ConstantColumn { index: j });
        }
        let sd = var.sqrt();
        for i in 0..n {
            out.set(i, j, (d.x.get(i, j) - mean) / sd);
        }
    }
    Dataset::new(out, d.y.clone())
}

/// How noisy copies relate to epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    /// Redrawn independently at every epoch.
    OnLine,
    /// Drawn once before training and fixed: the conventional augmentation.
    OffLine,
    /// No augmentation; effective K is 0.
    NoNoise,
}

impl fmt::Display for NoiseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseMode::OnLine => "on-line",
            NoiseMode::OffLine => "off-line",
            NoiseMode::NoNoise => "none",
        })
    }
}

/// Number of copies, noise scale, mode, and seed governing `U_{t,k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationSpec {
    pub k: usize,
    pub tau: f64,
    pub mode: NoiseMode,
    pub seed: u64,
}

impl AugmentationSpec {
    /// K as used by the update rules: 0 when the mode is `NoNoise`.
    pub fn effective_k(&self) -> usize {
        match self.mode {
            NoiseMode::NoNoise => 0,
            _ => self.k,
        }
    }
}

/// Source of the noise matrices `U_{t,k}` for one dataset shape.
///
/// `U_{t,0}` is always the zero matrix. Off-line banks return the identical
/// matrix for every epoch `t`; on-line banks derive the stream for `(t, k)`
/// by hashing both indices, so distinct epochs are independent draws and
/// repeated requests replay exactly.
#[derive(Debug, Clone)]
pub struct NoiseBank {
    mode: NoiseMode,
    k: usize,
    rows: usize,
    cols: usize,
    sd: f64,
    base: GaussSource,
    offline: Vec<Mat>,
    zero: Mat,
}

impl NoiseBank {
    pub fn mode(&self) -> NoiseMode {
        self.mode
    }

    /// Effective number of noisy copies.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Per-element noise standard deviation, `tau / sqrt(n)`.
    pub fn sd(&self) -> f64 {
        self.sd
    }

    /// The noise matrix `U_{t,k}`. `copy` must be in `0..=k()`.
    pub fn matrix(&self, epoch: usize, copy: usize) -> Cow<'_, Mat> {
        assert!(copy <= self.k, "copy index {copy} out of 0..={}", self.k);
        if copy == 0 || self.sd == 0.0 {
            return Cow::Borrowed(&self.zero);
        }
        match self.mode {
            NoiseMode::NoNoise => Cow::Borrowed(&self.zero),
            NoiseMode::OffLine => Cow::Borrowed(&self.offline[copy - 1]),
            NoiseMode::OnLine => {
                let src = self
                    .base
                    .substream(&[TAG_ONLINE, epoch as u64, copy as u64]);
                Cow::Owned(
                    gauss_mat(&src, self.rows, self.cols, self.sd)
                        .expect("bank dimensions are valid"),
                )
            }
        }
    }
}

/// Build the noise bank for a dataset: per-element sd `tau / sqrt(n)`.
pub fn make_noise_bank(d: &Dataset, a: &AugmentationSpec) -> Result<NoiseBank, DataError> {
    if a.tau < 0.0 || a.tau.is_nan() {
        return Err(DataError::Param(format!("tau must be >= 0, got {}", a.tau)));
    }
    let (rows, cols) = (d.n(), d.m());
    let k = a.effective_k();
    let sd = a.tau / (rows as f64).sqrt();
    let base = GaussSource::new(a.seed, 0);
    let offline = if a.mode == NoiseMode::OffLine && sd > 0.0 {
        (1..=k)
            .map(|copy| gauss_mat(&base.substream(&[TAG_OFFLINE, copy as u64]), rows, cols, sd))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        Vec::new()
    };
    Ok(NoiseBank {
        mode: a.mode,
        k,
        rows,
        cols,
        sd,
        base,
        offline,
        zero: Mat::zeros(rows, cols),
    })
}

/// Contiguous mini-batch partition: `Q` blocks of size `rho` covering
/// `0..n` in order, never shuffled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPartition {
    n: usize,
    rho: usize,
    q: usize,
}

impl BatchPartition {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Mini-batch size.
    pub fn rho(&self) -> usize {
        self.rho
    }

    /// Number of mini-batches.
    pub fn q_count(&self) -> usize {
        self.q
    }

    /// Row range of block `q`, `q` in `0..q_count()`.
    pub fn block(&self, q: usize) -> std::ops::Range<usize> {
        assert!(q < self.q, "block {q} out of 0..{}", self.q);
        q * self.rho..(q + 1) * self.rho
    }

    pub fn blocks(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        (0..self.q).map(|q| self.block(q))
    }
}

/// Split `0..n` into contiguous blocks of size `rho`; `rho` must divide `n`.
pub fn partition(n: usize, rho: usize) -> Result<BatchPartition, DataError> {
    if rho == 0 || rho > n {
        return Err(DataError::Param(format!(
            "batch size {rho} out of range 1..={n}"
        )));
    }
    if !n.is_multiple_of(rho) {
        return Err(DataError::Param(format!(
            "batch size {rho} does not divide n = {n}"
        )));
    }
    Ok(BatchPartition { n, rho, q: n / rho })
}

/// Rows of `(X, y)` selected by `block`, preserving the given order.
/// Indices are 0-based.
pub fn slice(d: &Dataset, block: &[usize]) -> Result<(Mat, Vector), DataError> {
    let mut xdata = Vec::with_capacity(block.len() * d.m());
    let mut ydata = Vec::with_capacity(block.len());
    for &i in block {
        if i >= d.n() {
            return Err(DataError::Param(format!(
                "row index {i} out of 0..{}",
                d.n()
            )));
        }
        xdata.extend_from_slice(d.x.row(i));
        ydata.push(d.y.get(i));
    }
    let x = Mat::new(block.len(), d.m(), xdata)?;
    Ok((x, Vector::new(ydata)))
}
