//! Minimal dense matrix/vector arithmetic and a reproducible Gaussian source.
//!
//! Everything is 64-bit floating point. The Gaussian source is addressed by
//! `(seed, stream, draw index)` so that any draw can be reproduced in
//! isolation, independently of execution order; this is what makes the
//! Monte-Carlo estimators in [`crate::oracle`] deterministic under
//! parallelism.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Identity of the random transform, recorded in run manifests so outputs
/// can be compared across implementations.
///
/// Uniform generator: ChaCha8 keyed by a SplitMix64 expansion of the 64-bit
/// seed, with the 64-bit stream id passed to the ChaCha stream parameter.
/// Gaussian transform: for draw index `i`, read the uniform words at
/// positions `2i` and `2i+1` (each `u = ((x >> 11) + 0.5) / 2^53`, strictly
/// inside (0,1)) and return `sqrt(-2 ln u1) * cos(2 pi u2)`.
pub const RNG_IDENT: &str = "chacha8/boxmuller-cos/v1";

/// Errors from shape or parameter violations in numeric kernels.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NumError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("invalid parameter: {0}")]
    Param(String),
}

fn shape_err(op: &'static str, detail: String) -> NumError {
    NumError::Shape { op, detail }
}

/// Dense matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    /// Build from row-major entries. Fails if the entry count does not match.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumError> {
        if data.len() != rows * cols {
            return Err(shape_err(
                "Mat::new",
                format!(
                    "{rows}x{cols} needs {} entries, got {}",
                    rows * cols,
                    data.len()
                ),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Row `i` as a slice.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    /// Elementwise sum, used to form noisy input copies `X + U`.
    pub fn add(&self, other: &Mat) -> Result<Mat, NumError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(shape_err(
                "Mat::add",
                format!(
                    "{}x{} vs {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Mat {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// Copy of the contiguous row range `[start, end)`.
    pub fn row_range(&self, start: usize, end: usize) -> Result<Mat, NumError> {
        if start > end || end > self.rows {
            return Err(shape_err(
                "Mat::row_range",
                format!("range {start}..{end} out of 0..{}", self.rows),
            ));
        }
        Ok(Mat {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        })
    }
}

/// Dense vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    pub fn new(data: Vec<f64>) -> Self {
        Self { data }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            data: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.data[i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: f64) {
        self.data[i] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&self, c: f64) -> Vector {
        Vector::new(self.data.iter().map(|v| c * v).collect())
    }

    pub fn add(&self, other: &Vector) -> Result<Vector, NumError> {
        if self.len() != other.len() {
            return Err(shape_err(
                "Vector::add",
                format!("{} vs {}", self.len(), other.len()),
            ));
        }
        Ok(Vector::new(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        ))
    }

    pub fn sub(&self, other: &Vector) -> Result<Vector, NumError> {
        if self.len() != other.len() {
            return Err(shape_err(
                "Vector::sub",
                format!("{} vs {}", self.len(), other.len()),
            ));
        }
        Ok(Vector::new(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        ))
    }

    /// `self + c * other`, in place.
    pub fn axpy(&mut self, c: f64, other: &Vector) -> Result<(), NumError> {
        if self.len() != other.len() {
            return Err(shape_err(
                "Vector::axpy",
                format!("{} vs {}", self.len(), other.len()),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
        Ok(())
    }

    pub fn dot(&self, other: &Vector) -> Result<f64, NumError> {
        if self.len() != other.len() {
            return Err(shape_err(
                "Vector::dot",
                format!("{} vs {}", self.len(), other.len()),
            ));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    /// Largest absolute entry; 0 for the empty vector.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Matrix-vector product `A v`.
pub fn matvec(a: &Mat, v: &Vector) -> Result<Vector, NumError> {
    if a.cols != v.len() {
        return Err(shape_err(
            "matvec",
            format!("{}x{} against vector of length {}", a.rows, a.cols, v.len()),
        ));
    }
    let mut out = vec![0.0; a.rows];
    for (i, o) in out.iter_mut().enumerate() {
        let row = a.row(i);
        let mut acc = 0.0;
        for (x, w) in row.iter().zip(v.as_slice()) {
            acc += x * w;
        }
        *o = acc;
    }
    Ok(Vector::new(out))
}

/// Transposed product `A^T v` without forming the transpose.
pub fn matvec_t(a: &Mat, v: &Vector) -> Result<Vector, NumError> {
    if a.rows != v.len() {
        return Err(shape_err(
            "matvec_t",
            format!("{}x{} against vector of length {}", a.rows, a.cols, v.len()),
        ));
    }
    let mut out = vec![0.0; a.cols];
    for i in 0..a.rows {
        let row = a.row(i);
        let vi = v.get(i);
        for (o, x) in out.iter_mut().zip(row) {
            *o += x * vi;
        }
    }
    Ok(Vector::new(out))
}

/// Squared Euclidean norm.
pub fn sq_norm(v: &Vector) -> f64 {
    v.as_slice().iter().map(|x| x * x).sum()
}

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer; the published mixing function behind all stream
/// derivation in this crate.
#[inline]
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(SPLITMIX_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Chain-mix a list of labels into one stream id: starting from 0, fold each
/// part with `s = splitmix64(s ^ part)`.
pub fn mix_stream(parts: &[u64]) -> u64 {
    parts.iter().fold(0u64, |s, &p| splitmix64(s ^ p))
}

/// Reproducible Gaussian source addressed by `(seed, stream, draw index)`.
///
/// Identical triples yield identical values across runs and across any
/// parallel schedule: each draw is a pure function of the address. The
/// transform is pinned by [`RNG_IDENT`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GaussSource {
    seed: u64,
    stream: u64,
}

/// Uniform in the open interval (0, 1) from the top 53 bits.
#[inline]
fn unit_open(x: u64) -> f64 {
    ((x >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0) // 2^-53
}

impl GaussSource {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Derive a source on a different stream of the same seed by chain-mixing
    /// the labels into the current stream id.
    pub fn substream(&self, labels: &[u64]) -> GaussSource {
        let stream = labels.iter().fold(self.stream, |s, &p| splitmix64(s ^ p));
        GaussSource {
            seed: self.seed,
            stream,
        }
    }

    fn key(&self) -> [u8; 32] {
        let mut key = [0u8; 32];
        let mut state = self.seed;
        for chunk in key.chunks_exact_mut(8) {
            state = state.wrapping_add(SPLITMIX_GAMMA);
            chunk.copy_from_slice(&splitmix64(state).to_le_bytes());
        }
        key
    }

    fn rng_at_draw(&self, draw_index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key());
        rng.set_stream(self.stream);
        // one Gaussian consumes two u64 reads = four 32-bit ChaCha words
        rng.set_word_pos(4 * u128::from(draw_index));
        rng
    }

    /// The standard-normal draw at `draw_index`.
    pub fn gauss_at(&self, draw_index: u64) -> f64 {
        let mut rng = self.rng_at_draw(draw_index);
        let u1 = unit_open(rng.next_u64());
        let u2 = unit_open(rng.next_u64());
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fill `out` with standard-normal draws starting at draw index 0.
    pub fn fill_gauss(&self, out: &mut [f64]) {
        let mut rng = self.rng_at_draw(0);
        for o in out.iter_mut() {
            let u1 = unit_open(rng.next_u64());
            let u2 = unit_open(rng.next_u64());
            *o = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}

/// `rows x cols` matrix of i.i.d. `N(0, sd^2)` draws from the source's
/// stream, starting at draw index 0. `sd = 0` yields the exact zero matrix.
pub fn gauss_mat(src: &GaussSource, rows: usize, cols: usize, sd: f64) -> Result<Mat, NumError> {
    if sd < 0.0 || sd.is_nan() {
        return Err(NumError::Param(format!(
            "gauss_mat: sd must be >= 0, got {sd}"
        )));
    }
    if sd == 0.0 {
        return Ok(Mat::zeros(rows, cols));
    }
    let mut data = vec![0.0; rows * cols];
    src.fill_gauss(&mut data);
    for v in &mut data {
        *v *= sd;
    }
    Ok(Mat { rows, cols, data })
}
