//! Independent verification engine: Monte-Carlo expectation estimates against
//! closed-form predictions, curve-distance metrics, log-log rate fits, and
//! the mini-batch telescoping identity.
//!
//! Monte-Carlo draws are independent and run in parallel; every draw is
//! addressed by its own stream, and aggregation folds the ordered draw
//! results sequentially (Welford), so results are bit-identical regardless
//! of scheduling.

use rayon::prelude::*;
use thiserror::Error;

use crate::data::{
    make_noise_bank, AugmentationSpec, BatchPartition, DataError, Dataset, NoiseBank, NoiseMode,
};
use crate::numkit::{gauss_mat, matvec, matvec_t, sq_norm, GaussSource, NumError, Vector};
use crate::trainers::{
    delta_s, mb_epoch_da, mb_epoch_da_traced, mb_epoch_ridge_equiv, MbTrace, TrainError,
    WeightTrajectory,
};

/// Standard-error multiple at which Monte-Carlo verdicts pass.
pub const Z_THRESHOLD: f64 = 5.0;

const TAG_MC_DRAW: u64 = 0x10;
const TAG_RATE: u64 = 0x11;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("divergence during Monte-Carlo draw {draw}")]
    Diverged { draw: usize },
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Statistical pass/fail record for one expectation claim.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub claim_id: String,
    pub mc_estimate: Vec<f64>,
    pub std_error: Vec<f64>,
    pub closed_form: Vec<f64>,
    /// Max over coordinates of |estimate - prediction| / SE.
    pub z_max: f64,
    pub n_draws: usize,
    pub threshold: f64,
    pub pass: bool,
}

impl Certificate {
    /// Combine Monte-Carlo statistics with a closed-form prediction.
    pub fn from_stats(
        claim_id: impl Into<String>,
        stats: &McStats,
        closed_form: &Vector,
        threshold: f64,
    ) -> Result<Certificate, OracleError> {
        if closed_form.len() != stats.mean.len() {
            return Err(OracleError::Param(format!(
                "closed form has {} coordinates, estimate has {}",
                closed_form.len(),
                stats.mean.len()
            )));
        }
        let mut z_max: f64 = 0.0;
        for j in 0..stats.mean.len() {
            let diff = (stats.mean.get(j) - closed_form.get(j)).abs();
            let se = stats.se.get(j);
            let z = if se == 0.0 {
                if diff == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                diff / se
            };
            z_max = z_max.max(z);
        }
        Ok(Certificate {
            claim_id: claim_id.into(),
            mc_estimate: stats.mean.as_slice().to_vec(),
            std_error: stats.se.as_slice().to_vec(),
            closed_form: closed_form.as_slice().to_vec(),
            z_max,
            n_draws: stats.n_draws,
            threshold,
            pass: z_max <= threshold,
        })
    }

    /// Per-coordinate z scores, `|estimate - prediction| / SE` with the
    /// zero-SE convention used for the verdict.
    pub fn coordinate_zs(&self) -> Vec<f64> {
        self.mc_estimate
            .iter()
            .zip(&self.closed_form)
            .zip(&self.std_error)
            .map(|((est, cf), se)| {
                let diff = (est - cf).abs();
                if *se == 0.0 {
                    if diff == 0.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    diff / se
                }
            })
            .collect()
    }

    /// One line of the report: claim id, draw count, z, verdict.
    pub fn report_line(&self) -> String {
        format!(
            "{} n_draws={} z_max={:.4} {}",
            self.claim_id,
            self.n_draws,
            self.z_max,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

/// Per-coordinate Monte-Carlo mean and standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct McStats {
    pub mean: Vector,
    pub se: Vector,
    pub n_draws: usize,
}

/// Welford fold over ordered draw vectors. Exact for identical draws: the
/// running mean stays bit-equal to the common value and M2 stays zero.
fn welford(draws: &[Vector]) -> McStats {
    let dim = draws.first().map(Vector::len).unwrap_or(0);
    let mut mean = Vector::zeros(dim);
    let mut m2 = Vector::zeros(dim);
    for (i, x) in draws.iter().enumerate() {
        let count = (i + 1) as f64;
        for j in 0..dim {
            let d = x.get(j) - mean.get(j);
            mean.set(j, mean.get(j) + d / count);
            let d2 = x.get(j) - mean.get(j);
            m2.set(j, m2.get(j) + d * d2);
        }
    }
    let n = draws.len();
    let mut se = Vector::zeros(dim);
    if n > 1 {
        let nf = n as f64;
        for j in 0..dim {
            se.set(j, (m2.get(j).max(0.0) / (nf - 1.0) / nf).sqrt());
        }
    }
    McStats {
        mean,
        se,
        n_draws: n,
    }
}

/// Which expected-update claim a certificate checks.
#[derive(Debug, Clone)]
pub enum UpdateRule {
    /// Full-batch SSE update of augmented training.
    Sse,
    /// Full-batch MSE update of augmented training.
    Mse,
    /// One inner step of the mini-batch double loop, conditioned on the
    /// iterate reached at `(copy, block)`; `copy >= 1`, `block` 0-based.
    Mb {
        partition: BatchPartition,
        copy: usize,
        block: usize,
        eta: f64,
    },
}

impl UpdateRule {
    fn claim_id(&self) -> String {
        match self {
            UpdateRule::Sse => "exp-update/sse".into(),
            UpdateRule::Mse => "exp-update/mse".into(),
            UpdateRule::Mb { copy, block, .. } => format!("exp-update/mb/k{copy}q{block}"),
        }
    }
}

fn online_bank(d: &Dataset, aug: &AugmentationSpec) -> Result<NoiseBank, OracleError> {
    let spec = AugmentationSpec {
        k: aug.k,
        tau: aug.tau,
        mode: NoiseMode::OnLine,
        seed: aug.seed,
    };
    Ok(make_noise_bank(d, &spec)?)
}

/// Monte-Carlo estimate of the expected update under `rule`, redrawing all
/// noise per draw. Draws run in parallel on distinct streams.
pub fn mc_expected_update(
    d: &Dataset,
    w: &Vector,
    aug: &AugmentationSpec,
    rule: &UpdateRule,
    n_draws: usize,
) -> Result<McStats, OracleError> {
    if n_draws < 100 {
        return Err(OracleError::Param(format!(
            "n_draws must be >= 100, got {n_draws}"
        )));
    }
    let bank = online_bank(d, aug)?;
    let draws: Vec<Vector> = match rule {
        UpdateRule::Sse => (1..=n_draws)
            .into_par_iter()
            .map(|t| crate::trainers::delta_da_sse(d, &bank, t, w))
            .collect::<Result<_, _>>()?,
        UpdateRule::Mse => (1..=n_draws)
            .into_par_iter()
            .map(|t| crate::trainers::delta_da_mse(d, &bank, t, w))
            .collect::<Result<_, _>>()?,
        UpdateRule::Mb {
            partition,
            copy,
            block,
            eta,
        } => {
            let w_star = mb_context_iterate(d, partition, &bank, w, *copy, *block, *eta)?;
            let b = partition.block(*block);
            let xq = d.x().row_range(b.start, b.end)?;
            let yq = Vector::new(d.y().as_slice()[b].to_vec());
            let sd = bank.sd();
            let src = GaussSource::new(aug.seed, 0);
            (1..=n_draws)
                .into_par_iter()
                .map(|i| {
                    let u = gauss_mat(
                        &src.substream(&[TAG_MC_DRAW, i as u64]),
                        xq.rows(),
                        xq.cols(),
                        sd,
                    )?;
                    let xq_eff = xq.add(&u)?;
                    mb_block_delta(&xq_eff, &yq, &w_star)
                })
                .collect::<Result<_, _>>()?
        }
    };
    Ok(welford(&draws))
}

/// `-(2/rho) Xq^T (yq - Xq w)`; the inner mini-batch update term.
fn mb_block_delta(xq: &crate::numkit::Mat, yq: &Vector, w: &Vector) -> Result<Vector, NumError> {
    let r = yq.sub(&matvec(xq, w)?)?;
    Ok(matvec_t(xq, &r)?.scale(-2.0 / xq.rows() as f64))
}

/// Advance the double loop with a fixed context draw (epoch 1 of the bank)
/// and return the iterate `w(t, copy, block - 1)` at which the `(copy,
/// block)` step is taken.
fn mb_context_iterate(
    d: &Dataset,
    partition: &BatchPartition,
    bank: &NoiseBank,
    w: &Vector,
    copy: usize,
    block: usize,
    eta: f64,
) -> Result<Vector, OracleError> {
    if copy == 0 || copy > bank.k() {
        return Err(OracleError::Param(format!(
            "mb rule needs 1 <= copy <= K = {}, got {copy}",
            bank.k()
        )));
    }
    if block >= partition.q_count() {
        return Err(OracleError::Param(format!(
            "mb rule block {block} out of 0..{}",
            partition.q_count()
        )));
    }
    let trace = mb_epoch_da_traced(d, partition, bank, 1, w, eta)?;
    let step_index = copy * partition.q_count() + block;
    Ok(if step_index == 0 {
        trace.start.clone()
    } else {
        trace.steps[step_index - 1].after.clone()
    })
}

/// Closed-form prediction of the expected update under `rule`, evaluated at
/// the same point as the Monte-Carlo estimate.
pub fn closed_form_update(
    d: &Dataset,
    w: &Vector,
    aug: &AugmentationSpec,
    rule: &UpdateRule,
) -> Result<Vector, OracleError> {
    let k = aug.effective_k() as f64;
    let tau = aug.tau;
    match rule {
        UpdateRule::Sse => {
            // (K+1) [delta_s + 2 (K tau^2 / (K+1)) w] = (K+1) delta_s + 2 K tau^2 w
            let mut g = delta_s(d, w)?.scale(k + 1.0);
            g.axpy(2.0 * k * tau * tau, w)?;
            Ok(g)
        }
        UpdateRule::Mse => {
            let inv_n = 1.0 / d.n() as f64;
            let mut g = delta_s(d, w)?.scale(inv_n);
            g.axpy(2.0 * tau * tau * inv_n * (k / (k + 1.0)), w)?;
            Ok(g)
        }
        UpdateRule::Mb {
            partition,
            copy,
            block,
            eta,
        } => {
            let bank = online_bank(d, aug)?;
            let w_star = mb_context_iterate(d, partition, &bank, w, *copy, *block, *eta)?;
            let b = partition.block(*block);
            let xq = d.x().row_range(b.start, b.end)?;
            let yq = Vector::new(d.y().as_slice()[b].to_vec());
            let mut g = mb_block_delta(&xq, &yq, &w_star)?;
            g.axpy(2.0 * tau * tau / d.n() as f64, &w_star)?;
            Ok(g)
        }
    }
}

/// Monte-Carlo mean of the update rule against its closed form; passes when
/// every coordinate agrees within [`Z_THRESHOLD`] standard errors.
pub fn certify_expected_update(
    d: &Dataset,
    w: &Vector,
    aug: &AugmentationSpec,
    rule: &UpdateRule,
    n_draws: usize,
) -> Result<Certificate, OracleError> {
    let stats = mc_expected_update(d, w, aug, rule, n_draws)?;
    let cf = closed_form_update(d, w, aug, rule)?;
    Certificate::from_stats(rule.claim_id(), &stats, &cf, Z_THRESHOLD)
}

/// Distance metrics between two training curves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveDistance {
    pub max_abs: f64,
    pub rms: f64,
    /// Mean absolute gap over the final 10% of epochs.
    pub tail_gap: f64,
}

/// Metrics on raw curve values; lengths must agree.
pub fn curve_distance(a: &[f64], b: &[f64]) -> Result<CurveDistance, OracleError> {
    if a.len() != b.len() {
        return Err(OracleError::Param(format!(
            "curve lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(OracleError::Param("curves are empty".into()));
    }
    let n = a.len();
    let mut max_abs: f64 = 0.0;
    let mut sumsq = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = (x - y).abs();
        max_abs = max_abs.max(d);
        sumsq += d * d;
    }
    let rms = (sumsq / n as f64).sqrt();
    let tail_len = n.div_ceil(10);
    let tail_gap = a[n - tail_len..]
        .iter()
        .zip(&b[n - tail_len..])
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / tail_len as f64;
    Ok(CurveDistance {
        max_abs,
        rms,
        tail_gap,
    })
}

/// Metrics between the recorded curves of two trajectories.
pub fn compare_curves(
    a: &WeightTrajectory,
    b: &WeightTrajectory,
) -> Result<CurveDistance, OracleError> {
    curve_distance(&a.curve, &b.curve)
}

/// Log-log regression of errors against sample sizes or step sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// OLS slope of `ln y` on `ln x`; `None` when the fit is degenerate
    /// (some error is exactly zero).
    pub slope: Option<f64>,
}

fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 2 || ys.iter().any(|&y| y <= 0.0) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

/// Convergence of the averaged noise-coupling term to its limit: one draw of
/// `|r_mse(K) - tau^2 w|` per K, fitted on log-log axes. The theoretical
/// slope is -1/2.
pub fn rate_r_mse(
    d: &Dataset,
    w: &Vector,
    tau: f64,
    ks: &[usize],
    seed: u64,
) -> Result<RateFit, OracleError> {
    if ks.len() < 2 || ks.windows(2).any(|p| p[0] >= p[1]) {
        return Err(OracleError::Param(
            "K values must be strictly increasing".into(),
        ));
    }
    if ks[0] < 10 {
        return Err(OracleError::Param(format!(
            "smallest K must be >= 10, got {}",
            ks[0]
        )));
    }
    let target = w.scale(tau * tau);
    let ys: Vec<f64> = ks
        .par_iter()
        .enumerate()
        .map(|(i, &k)| {
            let spec = AugmentationSpec {
                k,
                tau,
                mode: NoiseMode::OnLine,
                seed: crate::numkit::mix_stream(&[seed, TAG_RATE, i as u64]),
            };
            let bank = make_noise_bank(d, &spec)?;
            let r = crate::trainers::r_mse(d, &bank, 1, w)?;
            Ok::<f64, OracleError>(sq_norm(&r.sub(&target)?).sqrt())
        })
        .collect::<Result<_, _>>()?;
    let xs: Vec<f64> = ks.iter().map(|&k| k as f64).collect();
    let slope = loglog_slope(&xs, &ys);
    Ok(RateFit { xs, ys, slope })
}

/// Deviation between the Monte-Carlo expectation of the augmented mini-batch
/// epoch and the ridge-equivalent epoch, across step sizes. The deviation is
/// the truncation error of the equivalence, so the log-log slope is ~2.
pub fn order_of_eta(
    d: &Dataset,
    partition: &BatchPartition,
    aug: &AugmentationSpec,
    etas: &[f64],
    n_draws: usize,
    w0: &Vector,
) -> Result<RateFit, OracleError> {
    if etas.len() < 3 {
        return Err(OracleError::Param(format!(
            "need at least 3 step sizes, got {}",
            etas.len()
        )));
    }
    if etas.iter().any(|&e| e <= 0.0 || e.is_nan()) {
        return Err(OracleError::Param("step sizes must be positive".into()));
    }
    let mut sorted: Vec<f64> = etas.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite step sizes"));
    let ratio = sorted[1] / sorted[0];
    for pair in sorted.windows(2) {
        let r = pair[1] / pair[0];
        if (r / ratio - 1.0).abs() > 1e-6 {
            return Err(OracleError::Param(
                "step sizes must form a geometric progression".into(),
            ));
        }
    }
    if n_draws < 100 {
        return Err(OracleError::Param(format!(
            "n_draws must be >= 100, got {n_draws}"
        )));
    }
    let bank = online_bank(d, aug)?;
    let mut ys = Vec::with_capacity(sorted.len());
    for &eta in &sorted {
        // redraw all of the epoch's noise per sample and rerun the loop
        let draws: Vec<Vector> = (1..=n_draws)
            .into_par_iter()
            .map(|t| mb_epoch_da(d, partition, &bank, t, w0, eta))
            .collect::<Result<_, _>>()?;
        for (i, v) in draws.iter().enumerate() {
            if !v.is_finite() {
                return Err(OracleError::Diverged { draw: i + 1 });
            }
        }
        let mean = welford(&draws).mean;
        let ridge = mb_epoch_ridge_equiv(d, partition, w0, eta, aug.effective_k(), aug.tau)?;
        ys.push(sq_norm(&mean.sub(&ridge)?).sqrt());
    }
    let slope = loglog_slope(&sorted, &ys);
    Ok(RateFit {
        xs: sorted,
        ys,
        slope,
    })
}

/// Check every prefix of a traced epoch against the accumulated-sum form
/// `w(t,k,q) = w(t-1) - eta * sum(deltas up to (k,q))`, elementwise.
pub fn prefix_sums_hold(trace: &MbTrace, tol: f64) -> bool {
    let dim = trace.start.len();
    let mut acc = Vector::zeros(dim);
    for step in &trace.steps {
        if acc.axpy(1.0, &step.delta).is_err() {
            return false;
        }
        for j in 0..dim {
            let predicted = trace.start.get(j) - trace.eta * acc.get(j);
            if (predicted - step.after.get(j)).abs() > tol {
                return false;
            }
        }
    }
    true
}

/// Execute the double loop and verify it telescopes: every iterate equals
/// the start minus eta times the running sum of update terms, within 1e-10.
pub fn telescoping_check(
    d: &Dataset,
    partition: &BatchPartition,
    bank: &NoiseBank,
    t: usize,
    w: &Vector,
    eta: f64,
) -> Result<bool, OracleError> {
    let trace = mb_epoch_da_traced(d, partition, bank, t, w, eta)?;
    Ok(prefix_sums_hold(&trace, 1e-10))
}

/// Exact least squares on the original data via the normal equations,
/// for small well-conditioned instances (`m <= n`). This is the independent
/// route used to cross-check gradient-descent fixed points.
pub fn lstsq(d: &Dataset) -> Result<Vector, OracleError> {
    let (n, m) = (d.n(), d.m());
    if m > n {
        return Err(OracleError::Param(format!(
            "normal equations need m <= n, got m = {m}, n = {n}"
        )));
    }
    // A = X^T X, b = X^T y
    let mut a = vec![0.0f64; m * m];
    for i in 0..n {
        let row = d.x().row(i);
        for j in 0..m {
            for l in j..m {
                a[j * m + l] += row[j] * row[l];
            }
        }
    }
    for j in 0..m {
        for l in 0..j {
            a[j * m + l] = a[l * m + j];
        }
    }
    let mut b = matvec_t(d.x(), d.y())?.as_slice().to_vec();

    // Gaussian elimination with partial pivoting
    for col in 0..m {
        let piv = (col..m)
            .max_by(|&r, &s| {
                a[r * m + col]
                    .abs()
                    .partial_cmp(&a[s * m + col].abs())
                    .expect("finite entries")
            })
            .expect("non-empty range");
        if a[piv * m + col].abs() < 1e-12 {
            return Err(OracleError::Param("normal equations are singular".into()));
        }
        if piv != col {
            for l in 0..m {
                a.swap(col * m + l, piv * m + l);
            }
            b.swap(col, piv);
        }
        for r in col + 1..m {
            let f = a[r * m + col] / a[col * m + col];
            for l in col..m {
                a[r * m + l] -= f * a[col * m + l];
            }
            b[r] -= f * b[col];
        }
    }
    let mut w = vec![0.0f64; m];
    for col in (0..m).rev() {
        let mut s = b[col];
        for l in col + 1..m {
            s -= a[col * m + l] * w[l];
        }
        w[col] = s / a[col * m + col];
    }
    Ok(Vector::new(w))
}
