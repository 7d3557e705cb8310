//! Minimal fully-connected network with manual backpropagation and plain SGD
//! over augmented data.
//!
//! Hidden layers use ReLU, the output layer is linear with width 1. Training
//! follows the same fixed pass order as the linear mini-batch loop: the
//! original block first, then copies k = 1..K, each in block order. The
//! recorded curve is the MSE on the training inputs actually used: augmented
//! data when training with copies, the original data otherwise.

use thiserror::Error;

use crate::data::{make_noise_bank, AugmentationSpec, Dataset, NoiseMode};
use crate::numkit::{GaussSource, Mat, NumError, Vector};

const TAG_MLP_INIT: u64 = 0x20;

/// Training aborts when any parameter exceeds this magnitude.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}

/// Hidden-layer activation. `Identity` exists for diagnostics: it turns the
/// network into a linear map so gradients have a closed form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

/// Architecture: layer widths from input to the scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

impl MlpSpec {
    pub fn relu(widths: Vec<usize>, seed: u64) -> Self {
        Self {
            widths,
            activation: Activation::Relu,
            seed,
        }
    }
}

/// Per-layer weight matrices (fan_out x fan_in) and bias vectors. Also the
/// shape of a gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub weights: Vec<Mat>,
    pub biases: Vec<Vector>,
    pub activation: Activation,
}

impl MlpParams {
    pub fn new(
        weights: Vec<Mat>,
        biases: Vec<Vector>,
        activation: Activation,
    ) -> Result<Self, MlpError> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(MlpError::Shape(
                "need one bias vector per weight matrix".into(),
            ));
        }
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.rows() != b.len() {
                return Err(MlpError::Shape(format!(
                    "layer {l}: weight rows {} vs bias length {}",
                    w.rows(),
                    b.len()
                )));
            }
            if l > 0 && weights[l - 1].rows() != w.cols() {
                return Err(MlpError::Shape(format!(
                    "layer {l}: fan-in {} does not chain from previous fan-out {}",
                    w.cols(),
                    weights[l - 1].rows()
                )));
            }
        }
        if weights.last().expect("non-empty").rows() != 1 {
            return Err(MlpError::Shape("output layer must have width 1".into()));
        }
        Ok(Self {
            weights,
            biases,
            activation,
        })
    }

    pub fn input_width(&self) -> usize {
        self.weights[0].cols()
    }

    pub fn layer_count(&self) -> usize {
        self.weights.len()
    }

    /// Zero parameters of the same shape; the accumulator for gradients.
    pub fn zeros_like(&self) -> MlpParams {
        MlpParams {
            weights: self
                .weights
                .iter()
                .map(|w| Mat::zeros(w.rows(), w.cols()))
                .collect(),
            biases: self.biases.iter().map(|b| Vector::zeros(b.len())).collect(),
            activation: self.activation,
        }
    }

    /// `self + c * other` over every parameter.
    pub fn axpy(&mut self, c: f64, other: &MlpParams) -> Result<(), MlpError> {
        if self.weights.len() != other.weights.len() {
            return Err(MlpError::Shape("parameter layouts differ".into()));
        }
        for (w, g) in self.weights.iter_mut().zip(&other.weights) {
            if w.rows() != g.rows() || w.cols() != g.cols() {
                return Err(MlpError::Shape("weight shapes differ".into()));
            }
            for i in 0..w.rows() {
                for j in 0..w.cols() {
                    w.set(i, j, w.get(i, j) + c * g.get(i, j));
                }
            }
        }
        for (b, g) in self.biases.iter_mut().zip(&other.biases) {
            if b.len() != g.len() {
                return Err(MlpError::Shape("bias shapes differ".into()));
            }
            for i in 0..b.len() {
                b.set(i, b.get(i) + c * g.get(i));
            }
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        let w = self
            .weights
            .iter()
            .flat_map(|m| m.as_slice())
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        self.biases.iter().fold(w, |acc, b| acc.max(b.max_abs()))
    }
}

/// Initialize from a spec: weights i.i.d. `N(0, 2/fan_in)`, biases zero.
pub fn init(spec: &MlpSpec) -> Result<MlpParams, MlpError> {
    if spec.widths.len() < 3 {
        return Err(MlpError::Param(
            "need at least one hidden layer (input, hidden..., output)".into(),
        ));
    }
    if *spec.widths.last().expect("non-empty") != 1 {
        return Err(MlpError::Param("output width must be 1".into()));
    }
    if spec.widths.contains(&0) {
        return Err(MlpError::Param("layer widths must be positive".into()));
    }
    let base = GaussSource::new(spec.seed, 0);
    let mut weights = Vec::with_capacity(spec.widths.len() - 1);
    let mut biases = Vec::with_capacity(spec.widths.len() - 1);
    for l in 0..spec.widths.len() - 1 {
        let (fan_in, fan_out) = (spec.widths[l], spec.widths[l + 1]);
        let sd = (2.0 / fan_in as f64).sqrt();
        let src = base.substream(&[TAG_MLP_INIT, l as u64]);
        weights.push(crate::numkit::gauss_mat(&src, fan_out, fan_in, sd)?);
        biases.push(Vector::zeros(fan_out));
    }
    MlpParams::new(weights, biases, spec.activation)
}

#[inline]
fn act(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Relu => {
            if z > 0.0 {
                z
            } else {
                0.0
            }
        }
        Activation::Identity => z,
    }
}

#[inline]
fn act_grad(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Relu => {
            if z > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Identity => 1.0,
    }
}

/// Forward pass for one input row.
pub fn forward(p: &MlpParams, x: &[f64]) -> Result<f64, MlpError> {
    if x.len() != p.input_width() {
        return Err(MlpError::Shape(format!(
            "input width {} vs expected {}",
            x.len(),
            p.input_width()
        )));
    }
    let mut a: Vec<f64> = x.to_vec();
    let last = p.layer_count() - 1;
    for (l, (w, b)) in p.weights.iter().zip(&p.biases).enumerate() {
        let mut next = vec![0.0; w.rows()];
        for (i, out) in next.iter_mut().enumerate() {
            let mut z = b.get(i);
            for (j, aj) in a.iter().enumerate() {
                z += w.get(i, j) * aj;
            }
            *out = if l < last { act(p.activation, z) } else { z };
        }
        a = next;
    }
    Ok(a[0])
}

/// Mean squared error of the network over a batch.
pub fn batch_mse(p: &MlpParams, x: &Mat, y: &Vector) -> Result<f64, MlpError> {
    if x.rows() != y.len() {
        return Err(MlpError::Shape(format!(
            "{} rows vs {} targets",
            x.rows(),
            y.len()
        )));
    }
    let mut sum = 0.0;
    for i in 0..x.rows() {
        let f = forward(p, x.row(i))?;
        let r = y.get(i) - f;
        sum += r * r;
    }
    Ok(sum / x.rows() as f64)
}

/// Gradient of the batch MSE `(1/B) sum (y_i - f(x_i))^2` with respect to
/// every parameter; the factor 2 from the square is retained.
pub fn grad(p: &MlpParams, x: &Mat, y: &Vector) -> Result<MlpParams, MlpError> {
    if x.rows() != y.len() {
        return Err(MlpError::Shape(format!(
            "{} rows vs {} targets",
            x.rows(),
            y.len()
        )));
    }
    if x.cols() != p.input_width() {
        return Err(MlpError::Shape(format!(
            "input width {} vs expected {}",
            x.cols(),
            p.input_width()
        )));
    }
    let layers = p.layer_count();
    let last = layers - 1;
    let batch = x.rows();
    let mut g = p.zeros_like();

    // per-sample forward caches
    let mut pre: Vec<Vec<f64>> = Vec::with_capacity(layers);
    let mut post: Vec<Vec<f64>> = Vec::with_capacity(layers);
    for i in 0..batch {
        pre.clear();
        post.clear();
        let mut a: Vec<f64> = x.row(i).to_vec();
        for (l, (w, b)) in p.weights.iter().zip(&p.biases).enumerate() {
            let mut z = vec![0.0; w.rows()];
            for (u, zu) in z.iter_mut().enumerate() {
                let mut s = b.get(u);
                for (j, aj) in a.iter().enumerate() {
                    s += w.get(u, j) * aj;
                }
                *zu = s;
            }
            let out: Vec<f64> = if l < last {
                z.iter().map(|&v| act(p.activation, v)).collect()
            } else {
                z.clone()
            };
            pre.push(z);
            post.push(out.clone());
            a = out;
        }

        // backward: d(loss)/d(z) per layer, starting from the linear output
        let f = post[last][0];
        let mut delta = vec![2.0 * (f - y.get(i)) / batch as f64];
        for l in (0..layers).rev() {
            let below: &[f64] = if l == 0 { x.row(i) } else { &post[l - 1] };
            for (u, du) in delta.iter().enumerate() {
                let gb = g.biases[l].get(u) + du;
                g.biases[l].set(u, gb);
                for (j, aj) in below.iter().enumerate() {
                    let gw = g.weights[l].get(u, j) + du * aj;
                    g.weights[l].set(u, j, gw);
                }
            }
            if l > 0 {
                let w = &p.weights[l];
                let mut next = vec![0.0; w.cols()];
                for (j, nj) in next.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for (u, du) in delta.iter().enumerate() {
                        s += w.get(u, j) * du;
                    }
                    *nj = s * act_grad(p.activation, pre[l - 1][j]);
                }
                delta = next;
            }
        }
    }
    Ok(g)
}

/// How each epoch walks the augmented data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Batch {
    /// One update per epoch over all (K+1)n samples.
    Full,
    /// Sequential updates over contiguous blocks of this size; must divide n.
    Mini(usize),
}

/// Result of an SGD run: per-epoch MSE on the training data actually used
/// (index 0 is the error before training) and the final parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpRun {
    pub curve: Vec<f64>,
    pub params: MlpParams,
}

/// Running mean of parameter sets; exact when all items are identical.
fn welford_params(items: &[MlpParams]) -> Result<MlpParams, MlpError> {
    let mut mean = items[0].clone();
    for (i, x) in items.iter().enumerate().skip(1) {
        let count = (i + 1) as f64;
        let mut diff = x.clone();
        diff.axpy(-1.0, &mean)?;
        mean.axpy(1.0 / count, &diff)?;
    }
    Ok(mean)
}

fn welford_scalar(items: &[f64]) -> f64 {
    let mut mean = items[0];
    for (i, &x) in items.iter().enumerate().skip(1) {
        mean += (x - mean) / (i + 1) as f64;
    }
    mean
}

/// Plain SGD over the augmented data in fixed order: the original block
/// first, then copies k = 1..K, each walked in contiguous block order.
/// Noise must be off-line (or absent): the copies are fixed for the whole
/// run, the conventional augmentation setting.
pub fn sgd_train(
    d: &Dataset,
    spec: &MlpSpec,
    aug: &AugmentationSpec,
    batch: Batch,
    eta: f64,
    epochs: usize,
) -> Result<MlpRun, MlpError> {
    if aug.mode == NoiseMode::OnLine {
        return Err(MlpError::Param(
            "sgd_train supports off-line noise only; use mode off-line or none".into(),
        ));
    }
    if eta <= 0.0 || eta.is_nan() {
        return Err(MlpError::Param(format!("eta must be > 0, got {eta}")));
    }
    let mut params = init(spec)?;
    if params.input_width() != d.m() {
        return Err(MlpError::Shape(format!(
            "network input width {} vs dataset m = {}",
            params.input_width(),
            d.m()
        )));
    }
    let bank = make_noise_bank(d, aug)?;
    let k = bank.k();
    // fixed copy designs: block 0 is the original data itself
    let mut designs: Vec<Mat> = Vec::with_capacity(k + 1);
    designs.push(d.x().clone());
    for copy in 1..=k {
        designs.push(d.x().add(bank.matrix(1, copy).as_ref())?);
    }
    let rho = match batch {
        Batch::Full => None,
        Batch::Mini(rho) => {
            let p = crate::data::partition(d.n(), rho)?;
            Some(p)
        }
    };

    let curve_point = |p: &MlpParams| -> Result<f64, MlpError> {
        let per_block: Vec<f64> = designs
            .iter()
            .map(|x| batch_mse(p, x, d.y()))
            .collect::<Result<_, _>>()?;
        Ok(welford_scalar(&per_block))
    };

    let mut curve = Vec::with_capacity(epochs + 1);
    curve.push(curve_point(&params)?);
    for epoch in 1..=epochs {
        match &rho {
            None => {
                // full batch: mean of per-copy mean gradients
                let grads: Vec<MlpParams> = designs
                    .iter()
                    .map(|x| grad(&params, x, d.y()))
                    .collect::<Result<_, _>>()?;
                let g = welford_params(&grads)?;
                params.axpy(-eta, &g)?;
            }
            Some(part) => {
                for x in &designs {
                    for b in part.blocks() {
                        let xq = x.row_range(b.start, b.end)?;
                        let yq = Vector::new(d.y().as_slice()[b].to_vec());
                        let g = grad(&params, &xq, &yq)?;
                        params.axpy(-eta, &g)?;
                    }
                }
            }
        }
        if params.max_abs() > DIVERGENCE_LIMIT {
            return Err(MlpError::Diverged { epoch });
        }
        curve.push(curve_point(&params)?);
    }
    Ok(MlpRun { curve, params })
}
