//! Gradient-descent update rules and training loops.
//!
//! Conventions follow the analysis exactly: the squared-error loss carries no
//! 1/2, so gradients keep their factor 2, and the mini-batch double loop runs
//! copies in the outer loop and blocks in the inner loop, never shuffled.
//! Training curves record the MSE on the original data after every epoch.

use thiserror::Error;

use crate::data::{
    make_noise_bank, AugmentationSpec, BatchPartition, Dataset, NoiseBank, NoiseMode,
};
use crate::numkit::{matvec, matvec_t, sq_norm, Mat, NumError, Vector};

/// Training aborts when any weight coordinate exceeds this magnitude.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: weight magnitude exceeded {limit:e}")]
    Diverged { epoch: usize, limit: f64 },
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}

/// Which update rule drives the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Plain gradient descent on the original data.
    Naive,
    /// l2-regularized gradient descent with an explicit lambda.
    Ridge,
    /// Augmented training, noise redrawn every epoch.
    DaOnline,
    /// Augmented training, noise fixed before training.
    DaOffline,
    /// The ridge rule predicted equivalent to mini-batch augmentation:
    /// effective rate (K+1) eta and lambda = K tau^2 / ((K+1) n).
    RidgeMbEquiv,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Naive => "naive",
            Regime::Ridge => "ridge",
            Regime::DaOnline => "da-online",
            Regime::DaOffline => "da-offline",
            Regime::RidgeMbEquiv => "ridge-mb-equiv",
        })
    }
}

/// Which error function the rule descends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    /// Full-batch sum of squared errors.
    Sse,
    /// Full-batch mean squared error.
    Mse,
    /// Mini-batch mean squared error over a fixed contiguous partition.
    Mb,
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Criterion::Sse => "sse",
            Criterion::Mse => "mse",
            Criterion::Mb => "mb",
        })
    }
}

/// Full description of one training run.
#[derive(Debug, Clone)]
pub struct TrainerConfig {
    pub regime: Regime,
    pub criterion: Criterion,
    pub eta: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub partition: Option<BatchPartition>,
    pub aug: Option<AugmentationSpec>,
    /// Initial weights; defaults to the zero vector.
    pub w0: Option<Vector>,
}

/// Weight states `w(0..T)` plus the per-epoch MSE on the original data.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTrajectory {
    pub states: Vec<Vector>,
    pub curve: Vec<f64>,
}

impl WeightTrajectory {
    pub fn final_w(&self) -> &Vector {
        self.states.last().expect("trajectory holds at least w(0)")
    }

    pub fn epochs(&self) -> usize {
        self.curve.len() - 1
    }
}

/// MSE on the original data, `|y - X w|^2 / n`: the quantity every training
/// curve records.
pub fn mse_original(d: &Dataset, w: &Vector) -> Result<f64, NumError> {
    let r = d.y().sub(&matvec(d.x(), w)?)?;
    Ok(sq_norm(&r) / d.n() as f64)
}

/// SSE gradient on the original data: `-2 X^T (y - X w)`.
pub fn delta_s(d: &Dataset, w: &Vector) -> Result<Vector, NumError> {
    let r = d.y().sub(&matvec(d.x(), w)?)?;
    Ok(matvec_t(d.x(), &r)?.scale(-2.0))
}

/// Gradient of the l2-regularized SSE cost: `delta_s + 2 lambda w`.
pub fn delta_c(d: &Dataset, w: &Vector, lambda: f64) -> Result<Vector, NumError> {
    let mut g = delta_s(d, w)?;
    g.axpy(2.0 * lambda, w)?;
    Ok(g)
}

/// Noise-coupling term of the augmented SSE gradient:
/// `sum_k { U_k^T y - (X^T U_k + U_k^T X - U_k^T U_k) w }`
/// over copies `k = 1..K` at epoch `t`. `K = 0` yields the zero vector.
pub fn r_sse(d: &Dataset, bank: &NoiseBank, t: usize, w: &Vector) -> Result<Vector, NumError> {
    let xw = matvec(d.x(), w)?;
    let mut acc = Vector::zeros(d.m());
    for copy in 1..=bank.k() {
        let u = bank.matrix(t, copy);
        let uw = matvec(&u, w)?;
        let uy = matvec_t(&u, d.y())?;
        let x_uw = matvec_t(d.x(), &uw)?;
        let u_xw = matvec_t(&u, &xw)?;
        let u_uw = matvec_t(&u, &uw)?;
        for j in 0..d.m() {
            let term = uy.get(j) - x_uw.get(j) - u_xw.get(j) + u_uw.get(j);
            acc.set(j, acc.get(j) + term);
        }
    }
    Ok(acc)
}

/// Augmented full-batch SSE update term: `(K+1) delta_s + 2 r_sse`.
pub fn delta_da_sse(
    d: &Dataset,
    bank: &NoiseBank,
    t: usize,
    w: &Vector,
) -> Result<Vector, NumError> {
    let kf = bank.k() as f64;
    let mut g = delta_s(d, w)?.scale(kf + 1.0);
    g.axpy(2.0, &r_sse(d, bank, t, w)?)?;
    Ok(g)
}

/// Average of the noise-coupling terms: `r_sse / K`. Requires `K >= 1`.
pub fn r_mse(d: &Dataset, bank: &NoiseBank, t: usize, w: &Vector) -> Result<Vector, NumError> {
    if bank.k() == 0 {
        return Err(NumError::Param(
            "r_mse needs at least one noisy copy".into(),
        ));
    }
    Ok(r_sse(d, bank, t, w)?.scale(1.0 / bank.k() as f64))
}

/// Augmented full-batch MSE update term:
/// `(1/n) delta_s + (2/n) (K/(K+1)) r_mse`.
pub fn delta_da_mse(
    d: &Dataset,
    bank: &NoiseBank,
    t: usize,
    w: &Vector,
) -> Result<Vector, NumError> {
    let inv_n = 1.0 / d.n() as f64;
    let mut g = delta_s(d, w)?.scale(inv_n);
    if bank.k() > 0 {
        let kf = bank.k() as f64;
        g.axpy(2.0 * inv_n * (kf / (kf + 1.0)), &r_mse(d, bank, t, w)?)?;
    }
    Ok(g)
}

/// Mini-batch MSE gradient for one effective design block:
/// `-(2/rho) Xq^T (yq - Xq w)`.
fn mb_delta(xq: &Mat, yq: &Vector, w: &Vector) -> Result<Vector, NumError> {
    let r = yq.sub(&matvec(xq, w)?)?;
    Ok(matvec_t(xq, &r)?.scale(-2.0 / xq.rows() as f64))
}

fn sliced_blocks(d: &Dataset, part: &BatchPartition) -> Result<Vec<(Mat, Vector)>, NumError> {
    part.blocks()
        .map(|b| {
            let x = d.x().row_range(b.start, b.end)?;
            let y = Vector::new(d.y().as_slice()[b.clone()].to_vec());
            Ok((x, y))
        })
        .collect()
}

/// One epoch of plain mini-batch training: sequential updates
/// `w <- w - eta * mb_delta(q)` for `q = 1..Q`.
pub fn mb_epoch_plain(
    d: &Dataset,
    part: &BatchPartition,
    w: &Vector,
    eta: f64,
) -> Result<Vector, NumError> {
    let blocks = sliced_blocks(d, part)?;
    let mut w = w.clone();
    for (xq, yq) in &blocks {
        let delta = mb_delta(xq, yq, &w)?;
        w.axpy(-eta, &delta)?;
    }
    Ok(w)
}

/// State of one inner step of the augmented mini-batch double loop.
#[derive(Debug, Clone, PartialEq)]
pub struct MbStep {
    /// Copy index `k`, 0 for the original data.
    pub copy: usize,
    /// Block index `q`, 0-based.
    pub block: usize,
    /// The update term applied at this step.
    pub delta: Vector,
    /// The iterate `w(t, k, q)` after applying it.
    pub after: Vector,
}

/// Full record of one augmented mini-batch epoch, step by step.
#[derive(Debug, Clone, PartialEq)]
pub struct MbTrace {
    pub start: Vector,
    pub eta: f64,
    pub q_count: usize,
    pub steps: Vec<MbStep>,
}

impl MbTrace {
    pub fn final_w(&self) -> &Vector {
        self.steps.last().map(|s| &s.after).unwrap_or(&self.start)
    }
}

/// One epoch of mini-batch training under augmentation, with the full
/// iterate/update trace: outer loop over copies `k = 0..K` (copy 0 is the
/// original data), inner loop over blocks `q = 1..Q`.
pub fn mb_epoch_da_traced(
    d: &Dataset,
    part: &BatchPartition,
    bank: &NoiseBank,
    t: usize,
    w: &Vector,
    eta: f64,
) -> Result<MbTrace, NumError> {
    let blocks = sliced_blocks(d, part)?;
    let mut steps = Vec::with_capacity((bank.k() + 1) * part.q_count());
    let mut cur = w.clone();
    for copy in 0..=bank.k() {
        if copy == 0 {
            for (q, (xq, yq)) in blocks.iter().enumerate() {
                let delta = mb_delta(xq, yq, &cur)?;
                cur.axpy(-eta, &delta)?;
                steps.push(MbStep {
                    copy,
                    block: q,
                    delta,
                    after: cur.clone(),
                });
            }
        } else {
            let u = bank.matrix(t, copy);
            for (q, (xq, yq)) in blocks.iter().enumerate() {
                let b = part.block(q);
                let xq_eff = xq.add(&u.row_range(b.start, b.end)?)?;
                let delta = mb_delta(&xq_eff, yq, &cur)?;
                cur.axpy(-eta, &delta)?;
                steps.push(MbStep {
                    copy,
                    block: q,
                    delta,
                    after: cur.clone(),
                });
            }
        }
    }
    Ok(MbTrace {
        start: w.clone(),
        eta,
        q_count: part.q_count(),
        steps,
    })
}

/// One epoch of mini-batch training under augmentation; returns `w(t, K, Q)`.
pub fn mb_epoch_da(
    d: &Dataset,
    part: &BatchPartition,
    bank: &NoiseBank,
    t: usize,
    w: &Vector,
    eta: f64,
) -> Result<Vector, NumError> {
    let blocks = sliced_blocks(d, part)?;
    let mut cur = w.clone();
    for copy in 0..=bank.k() {
        if copy == 0 {
            for (xq, yq) in &blocks {
                let delta = mb_delta(xq, yq, &cur)?;
                cur.axpy(-eta, &delta)?;
            }
        } else {
            let u = bank.matrix(t, copy);
            for (q, (xq, yq)) in blocks.iter().enumerate() {
                let b = part.block(q);
                let xq_eff = xq.add(&u.row_range(b.start, b.end)?)?;
                let delta = mb_delta(&xq_eff, yq, &cur)?;
                cur.axpy(-eta, &delta)?;
            }
        }
    }
    Ok(cur)
}

/// One epoch of the ridge rule equivalent to augmented mini-batch training:
/// `Q` sequential updates with effective rate `(K+1) eta` and shrinkage
/// `(K/(K+1)) (2 tau^2 / n)` applied to the current iterate.
pub fn mb_epoch_ridge_equiv(
    d: &Dataset,
    part: &BatchPartition,
    w: &Vector,
    eta: f64,
    k: usize,
    tau: f64,
) -> Result<Vector, NumError> {
    let blocks = sliced_blocks(d, part)?;
    let kf = k as f64;
    let rate = eta * (kf + 1.0);
    let shrink = (kf / (kf + 1.0)) * (2.0 * tau * tau / d.n() as f64);
    let mut cur = w.clone();
    for (xq, yq) in &blocks {
        let mut step = mb_delta(xq, yq, &cur)?;
        step.axpy(shrink, &cur)?;
        cur.axpy(-rate, &step)?;
    }
    Ok(cur)
}

/// One epoch of mini-batch ridge with an explicit lambda:
/// `w <- w - eta (mb_delta(q) + 2 lambda w)` per block.
fn mb_epoch_ridge(
    d: &Dataset,
    part: &BatchPartition,
    w: &Vector,
    eta: f64,
    lambda: f64,
) -> Result<Vector, NumError> {
    let blocks = sliced_blocks(d, part)?;
    let mut cur = w.clone();
    for (xq, yq) in &blocks {
        let mut step = mb_delta(xq, yq, &cur)?;
        step.axpy(2.0 * lambda, &cur)?;
        cur.axpy(-eta, &step)?;
    }
    Ok(cur)
}

struct Plan<'a> {
    bank: Option<NoiseBank>,
    partition: Option<&'a BatchPartition>,
}

fn validate<'a>(d: &Dataset, cfg: &'a TrainerConfig) -> Result<Plan<'a>, TrainError> {
    if cfg.eta <= 0.0 || cfg.eta.is_nan() {
        return Err(TrainError::Config(format!(
            "eta must be > 0, got {}",
            cfg.eta
        )));
    }
    if cfg.lambda < 0.0 || cfg.lambda.is_nan() {
        return Err(TrainError::Config(format!(
            "lambda must be >= 0, got {}",
            cfg.lambda
        )));
    }
    let needs_aug = matches!(
        cfg.regime,
        Regime::DaOnline | Regime::DaOffline | Regime::RidgeMbEquiv
    );
    if needs_aug && cfg.aug.is_none() {
        return Err(TrainError::Config(format!(
            "regime {} requires an augmentation spec",
            cfg.regime
        )));
    }
    match (cfg.regime, cfg.aug.as_ref().map(|a| a.mode)) {
        (Regime::DaOnline, Some(mode)) if mode != NoiseMode::OnLine => {
            return Err(TrainError::Config(format!(
                "regime da-online requires on-line noise, augmentation spec says {mode}"
            )));
        }
        (Regime::DaOffline, Some(mode)) if mode != NoiseMode::OffLine => {
            return Err(TrainError::Config(format!(
                "regime da-offline requires off-line noise, augmentation spec says {mode}"
            )));
        }
        _ => {}
    }
    if cfg.regime == Regime::RidgeMbEquiv && cfg.criterion != Criterion::Mb {
        return Err(TrainError::Config(format!(
            "regime ridge-mb-equiv is only defined for the mb criterion, got {}",
            cfg.criterion
        )));
    }
    let partition = match cfg.criterion {
        Criterion::Mb => {
            let p = cfg
                .partition
                .as_ref()
                .ok_or_else(|| TrainError::Config("criterion mb requires a partition".into()))?;
            if p.n() != d.n() {
                return Err(TrainError::Config(format!(
                    "partition covers {} rows but the dataset has {}",
                    p.n(),
                    d.n()
                )));
            }
            Some(p)
        }
        _ => None,
    };
    let bank = match cfg.regime {
        Regime::DaOnline | Regime::DaOffline => Some(make_noise_bank(
            d,
            cfg.aug.as_ref().expect("checked above"),
        )?),
        _ => None,
    };
    Ok(Plan { bank, partition })
}

/// Run `epochs` epochs of the configured regime/criterion pair, recording the
/// MSE on the original data after every epoch. Deterministic given seeds.
pub fn train(d: &Dataset, cfg: &TrainerConfig) -> Result<WeightTrajectory, TrainError> {
    let plan = validate(d, cfg)?;
    let mut w = match &cfg.w0 {
        Some(w0) => {
            if w0.len() != d.m() {
                return Err(TrainError::Config(format!(
                    "w0 has length {} but the dataset has m = {}",
                    w0.len(),
                    d.m()
                )));
            }
            w0.clone()
        }
        None => Vector::zeros(d.m()),
    };
    let inv_n = 1.0 / d.n() as f64;
    let mut states = Vec::with_capacity(cfg.epochs + 1);
    let mut curve = Vec::with_capacity(cfg.epochs + 1);
    states.push(w.clone());
    curve.push(mse_original(d, &w)?);

    for t in 1..=cfg.epochs {
        match (cfg.criterion, cfg.regime) {
            (Criterion::Sse, Regime::Naive) => {
                let delta = delta_s(d, &w)?;
                w.axpy(-cfg.eta, &delta)?;
            }
            (Criterion::Sse, Regime::Ridge) => {
                let delta = delta_c(d, &w, cfg.lambda)?;
                w.axpy(-cfg.eta, &delta)?;
            }
            (Criterion::Sse, Regime::DaOnline | Regime::DaOffline) => {
                // (K+1) eta * [delta_s + 2/(K+1) r]: the bracketed form keeps
                // the tau = 0 case exactly equal to naive GD at rate (K+1) eta
                let bank = plan.bank.as_ref().expect("da regime has a bank");
                let kf = bank.k() as f64;
                let mut bracket = delta_s(d, &w)?;
                bracket.axpy(2.0 / (kf + 1.0), &r_sse(d, bank, t, &w)?)?;
                w.axpy(-(cfg.eta * (kf + 1.0)), &bracket)?;
            }
            (Criterion::Mse, Regime::Naive) => {
                let delta = delta_s(d, &w)?.scale(inv_n);
                w.axpy(-cfg.eta, &delta)?;
            }
            (Criterion::Mse, Regime::Ridge) => {
                // cost S(w)/n + lambda |w|^2
                let mut delta = delta_s(d, &w)?.scale(inv_n);
                delta.axpy(2.0 * cfg.lambda, &w)?;
                w.axpy(-cfg.eta, &delta)?;
            }
            (Criterion::Mse, Regime::DaOnline | Regime::DaOffline) => {
                let bank = plan.bank.as_ref().expect("da regime has a bank");
                let delta = delta_da_mse(d, bank, t, &w)?;
                w.axpy(-cfg.eta, &delta)?;
            }
            (Criterion::Mb, Regime::Naive) => {
                w = mb_epoch_plain(d, plan.partition.expect("validated"), &w, cfg.eta)?;
            }
            (Criterion::Mb, Regime::Ridge) => {
                w = mb_epoch_ridge(
                    d,
                    plan.partition.expect("validated"),
                    &w,
                    cfg.eta,
                    cfg.lambda,
                )?;
            }
            (Criterion::Mb, Regime::DaOnline | Regime::DaOffline) => {
                let bank = plan.bank.as_ref().expect("da regime has a bank");
                w = mb_epoch_da(d, plan.partition.expect("validated"), bank, t, &w, cfg.eta)?;
            }
            (Criterion::Mb, Regime::RidgeMbEquiv) => {
                let aug = cfg.aug.as_ref().expect("validated");
                w = mb_epoch_ridge_equiv(
                    d,
                    plan.partition.expect("validated"),
                    &w,
                    cfg.eta,
                    aug.effective_k(),
                    aug.tau,
                )?;
            }
            (c, Regime::RidgeMbEquiv) => {
                unreachable!("ridge-mb-equiv with criterion {c} rejected by validation")
            }
        }
        if w.max_abs() > DIVERGENCE_LIMIT {
            return Err(TrainError::Diverged {
                epoch: t,
                limit: DIVERGENCE_LIMIT,
            });
        }
        states.push(w.clone());
        curve.push(mse_original(d, &w)?);
    }
    Ok(WeightTrajectory { states, curve })
}
