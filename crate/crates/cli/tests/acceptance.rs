//! Acceptance suite for the figure presets and the network experiment.
//! Each test implements one criterion at its stated tolerance and prints one
//! pass/fail line.
//!
//! Tail-gap thresholds are self-calibrated: the published curves carry no
//! numeric values, so "consistent" is measured against the seed-to-seed
//! fluctuation of the on-line augmented runs themselves (the 95th percentile
//! of pairwise tail gaps across calibration seeds disjoint from the
//! evaluated seeds).

use std::time::Instant;

use rayon::prelude::*;

use dalab::data::{gen_synthetic, NoiseMode};
use dalab::mlp::{batch_mse, grad, init, sgd_train, Batch, MlpSpec};
use dalab::oracle::curve_distance;
use dalab::trainers::train;

use dalab_cli::presets::{find, LinearPreset, MlpPreset, Preset, DEFAULT_SEEDS};

const CAL_SEEDS_FIG2: std::ops::RangeInclusive<u64> = 101..=120;
const CAL_SEEDS_FIG3: std::ops::RangeInclusive<u64> = 101..=112;

fn linear(name: &str) -> LinearPreset {
    match find(name).unwrap() {
        Preset::Linear(p) => p,
        _ => panic!("{name} is not a linear preset"),
    }
}

fn mlp_preset() -> MlpPreset {
    match find("fig4-synthetic").unwrap() {
        Preset::Mlp(p) => p,
        _ => panic!(),
    }
}

fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {criterion}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn tail_gap(a: &[f64], b: &[f64]) -> f64 {
    curve_distance(a, b).unwrap().tail_gap
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Nearest-rank 95th percentile.
fn p95(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((0.95 * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

fn da_curves(p: &LinearPreset, mode: NoiseMode, seeds: &[u64]) -> Vec<Vec<f64>> {
    let d = gen_synthetic(&p.synth).unwrap();
    seeds
        .par_iter()
        .map(|&s| train(&d, &p.da_config(mode, s)).unwrap().curve)
        .collect()
}

fn pairwise_tail_gaps(curves: &[Vec<f64>]) -> Vec<f64> {
    let mut gaps = Vec::new();
    for i in 0..curves.len() {
        for j in i + 1..curves.len() {
            gaps.push(tail_gap(&curves[i], &curves[j]));
        }
    }
    gaps
}

/// Criterion 6: four-panel reproduction on the under-parametrized instance
/// (n=20, m=15, sigma_x=0.5, sigma=0.2, tau=1, 1000 epochs).
/// (a) the on-line augmented curve sits within the self-seed envelope of
///     the ridge comparator, per panel;
/// (b) the off-line curve deviates from ridge by more than the on-line one
///     in at least 4 of 5 seeds, per panel;
/// (c) the naive SSE and MSE(eta*n) curves are identical within 1e-10.
/// Runtime <= 2 minutes.
#[test]
fn criterion_6_underparam_panels() {
    let start = Instant::now();
    let eval_seeds = DEFAULT_SEEDS;
    let cal_seeds: Vec<u64> = CAL_SEEDS_FIG2.collect();
    let mut detail = String::new();
    let mut pass = true;

    for name in ["fig2a", "fig2b", "fig2c", "fig2d"] {
        let p = linear(name);
        let d = gen_synthetic(&p.synth).unwrap();
        let ridge = train(&d, &p.reg_config()).unwrap().curve;
        let on_eval = da_curves(&p, NoiseMode::OnLine, &eval_seeds);
        let off_eval = da_curves(&p, NoiseMode::OffLine, &eval_seeds);
        let on_cal = da_curves(&p, NoiseMode::OnLine, &cal_seeds);

        // (a) two self-seed envelopes from the calibration population: the
        // literal one (the ridge comparison repeated under fresh comparator
        // seeds) and the harsher pairwise fluctuation band
        let envelope = p95(&on_cal
            .iter()
            .map(|c| tail_gap(c, &ridge))
            .collect::<Vec<_>>());
        let envelope_pairwise = p95(&pairwise_tail_gaps(&on_cal));
        let on_gaps: Vec<f64> = on_eval.iter().map(|c| tail_gap(c, &ridge)).collect();
        let a_ok = median(&on_gaps) <= envelope && median(&on_gaps) <= envelope_pairwise;

        // (b) off-line deviates more than on-line, seed by seed
        let off_gaps: Vec<f64> = off_eval.iter().map(|c| tail_gap(c, &ridge)).collect();
        let b_count = on_gaps
            .iter()
            .zip(&off_gaps)
            .filter(|(on, off)| off > on)
            .count();
        let b_ok = b_count >= 4;

        pass &= a_ok && b_ok;
        detail.push_str(&format!(
            "{name}: on-med {:.2e} <= env {:.2e} / pairwise {:.2e}: {a_ok}, off>on {b_count}/5; ",
            median(&on_gaps),
            envelope,
            envelope_pairwise
        ));
    }

    // (c) normalization identity between the SSE and MSE panels
    let a = linear("fig2a");
    let b = linear("fig2b");
    let d = gen_synthetic(&a.synth).unwrap();
    let naive_sse = train(&d, &a.naive_config()).unwrap().curve;
    let naive_mse = train(&d, &b.naive_config()).unwrap().curve;
    let c_gap = curve_distance(&naive_sse, &naive_mse).unwrap().max_abs;
    let c_ok = c_gap <= 1e-10;
    pass &= c_ok;

    let elapsed = start.elapsed().as_secs_f64();
    pass &= elapsed <= 120.0;
    detail.push_str(&format!("sse-vs-mse max_abs {c_gap:.2e}, {elapsed:.1}s"));
    report("6 underparam-panels", pass, &detail);
}

/// Criterion 7: over-parametrized reproduction (m=100 > n=20, tau=2,
/// eta=0.0001*Q, 3000 epochs).
/// (a) the on-line curves for K=2 and K=5 agree within twice the self-seed
///     envelope of that comparison (the 95th percentile of the same cross-K
///     gap over calibration seeds), and the gap is negligible on the curve
///     scale (<= 0.5% of the initial MSE): the equivalent lambda differs by
///     the factor (K=2)/(K=2+1) vs (K=5)/(K=5+1), so the two rules have
///     genuinely different fixed points and the gap cannot sit inside the
///     pure within-K fluctuation band;
/// (b) off-line deviates from ridge by more than on-line in >= 4 of 5
///     seeds, for both K.
#[test]
fn criterion_7_overparam_panels() {
    let start = Instant::now();
    let eval_seeds = DEFAULT_SEEDS;
    let cal_seeds: Vec<u64> = CAL_SEEDS_FIG3.collect();
    let k2 = linear("fig3a");
    let k5 = linear("fig3b");

    let on2 = da_curves(&k2, NoiseMode::OnLine, &eval_seeds);
    let on5 = da_curves(&k5, NoiseMode::OnLine, &eval_seeds);
    let cal2 = da_curves(&k2, NoiseMode::OnLine, &cal_seeds);
    let cal5 = da_curves(&k5, NoiseMode::OnLine, &cal_seeds);

    // self-seed envelope of the cross-K comparison itself
    let cal_cross: Vec<f64> = cal2
        .iter()
        .zip(&cal5)
        .map(|(a, b)| tail_gap(a, b))
        .collect();
    let envelope = p95(&cal_cross);

    // (a) K=2 and K=5 on-line curves, matched by seed
    let cross_gaps: Vec<f64> = on2.iter().zip(&on5).map(|(a, b)| tail_gap(a, b)).collect();
    let initial_mse = on2[0][0];
    let scale_ok = median(&cross_gaps) <= 0.005 * initial_mse;
    let a_ok = median(&cross_gaps) <= 2.0 * envelope && scale_ok;

    // (b) off-line sensitivity, per preset
    let mut detail = format!(
        "cross-K med {:.2e} <= 2*env {:.2e} and <= 0.5% of initial {:.2e}: {a_ok}; ",
        median(&cross_gaps),
        2.0 * envelope,
        initial_mse
    );
    let mut b_ok = true;
    for (p, on_eval) in [(&k2, &on2), (&k5, &on5)] {
        let d = gen_synthetic(&p.synth).unwrap();
        let ridge = train(&d, &p.reg_config()).unwrap().curve;
        let off = da_curves(p, NoiseMode::OffLine, &eval_seeds);
        let on_gaps: Vec<f64> = on_eval.iter().map(|c| tail_gap(c, &ridge)).collect();
        let off_gaps: Vec<f64> = off.iter().map(|c| tail_gap(c, &ridge)).collect();
        let count = on_gaps
            .iter()
            .zip(&off_gaps)
            .filter(|(on, off)| off > on)
            .count();
        b_ok &= count >= 4;
        detail.push_str(&format!("{}: off>on {count}/5; ", p.name));
    }

    let elapsed = start.elapsed().as_secs_f64();
    detail.push_str(&format!("{elapsed:.1}s"));
    report("7 overparam-panels", a_ok && b_ok, &detail);
}

/// Smallest |pre-activation| across hidden units and samples: central
/// differences are only a valid oracle where the loss is differentiable, so
/// instances must keep every unit away from the ReLU kink by much more than
/// the step size. (Zero-initialized biases can land exactly on the kink
/// when a whole previous layer is inactive for some sample.)
fn kink_margin(p: &dalab::mlp::MlpParams, x: &dalab::numkit::Mat) -> f64 {
    let mut min_abs = f64::INFINITY;
    let last = p.layer_count() - 1;
    for i in 0..x.rows() {
        let mut a: Vec<f64> = x.row(i).to_vec();
        for (l, (w, b)) in p.weights.iter().zip(&p.biases).enumerate() {
            let mut next = vec![0.0; w.rows()];
            for (u, out) in next.iter_mut().enumerate() {
                let mut z = b.get(u);
                for (j, aj) in a.iter().enumerate() {
                    z += w.get(u, j) * aj;
                }
                if l < last {
                    min_abs = min_abs.min(z.abs());
                    *out = if z > 0.0 { z } else { 0.0 };
                } else {
                    *out = z;
                }
            }
            a = next;
        }
    }
    min_abs
}

fn finite_difference_worst(widths: Vec<usize>, seed: u64) -> f64 {
    let m = widths[0];
    // walk the seed forward until the instance has a safe differentiability
    // margin (>= 1e-3, step size is 1e-5)
    let (d, p) = (0..)
        .map(|offset| {
            let d = gen_synthetic(&dalab::data::SyntheticSpec {
                n: 6,
                m,
                sigma_x: 0.5,
                sigma: 0.2,
                seed: seed + offset,
            })
            .unwrap();
            let p = init(&MlpSpec::relu(widths.clone(), seed + offset + 500)).unwrap();
            (d, p)
        })
        .find(|(d, p)| kink_margin(p, d.x()) >= 1e-3)
        .expect("a safe instance exists");
    let g = grad(&p, d.x(), d.y()).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for l in 0..p.layer_count() {
        for i in 0..p.weights[l].rows() {
            for j in 0..p.weights[l].cols() {
                let base = p.weights[l].get(i, j);
                let mut plus = p.clone();
                plus.weights[l].set(i, j, base + h);
                let mut minus = p.clone();
                minus.weights[l].set(i, j, base - h);
                let fd = (batch_mse(&plus, d.x(), d.y()).unwrap()
                    - batch_mse(&minus, d.x(), d.y()).unwrap())
                    / (2.0 * h);
                let an = g.weights[l].get(i, j);
                worst = worst.max((fd - an).abs() / an.abs().max(1.0));
            }
        }
        for i in 0..p.biases[l].len() {
            let base = p.biases[l].get(i);
            let mut plus = p.clone();
            plus.biases[l].set(i, base + h);
            let mut minus = p.clone();
            minus.biases[l].set(i, base - h);
            let fd = (batch_mse(&plus, d.x(), d.y()).unwrap()
                - batch_mse(&minus, d.x(), d.y()).unwrap())
                / (2.0 * h);
            let an = g.biases[l].get(i);
            worst = worst.max((fd - an).abs() / an.abs().max(1.0));
        }
    }
    worst
}

/// Criterion 9: network gradients check against central finite differences
/// (relative error <= 1e-5 on 10 random small networks), and the synthetic
/// qualitative replication holds: under mini-batch training the augmented
/// run shows a larger first-epoch drop and a higher final plateau than the
/// naive run in the 5-seed median; under full-batch MSE the first-epoch
/// drops are indistinguishable (median paired relative difference <= 0.10)
/// while the plateaus differ (median ratio >= 1.2).
#[test]
fn criterion_9_network_replication() {
    // (a) gradient correctness
    let mut worst: f64 = 0.0;
    for i in 0..10u64 {
        let widths = match i % 4 {
            0 => vec![3, 5, 1],
            1 => vec![4, 8, 1],
            2 => vec![2, 6, 3, 1],
            _ => vec![5, 4, 4, 1],
        };
        worst = worst.max(finite_difference_worst(widths, 700 + i));
    }
    let grad_ok = worst <= 1e-5;

    // (b, c) qualitative replication at the preset calibration
    let p = mlp_preset();
    let d = gen_synthetic(&p.synth).unwrap();
    let run = |da: bool, batch: Batch, eta: f64, seed: u64| {
        let aug = if da {
            p.da_aug(seed)
        } else {
            p.naive_aug(seed)
        };
        sgd_train(&d, &p.spec(seed), &aug, batch, eta, p.epochs)
            .unwrap()
            .curve
    };
    let seeds = DEFAULT_SEEDS;

    let collect = |da: bool, batch: Batch, eta: f64| -> Vec<Vec<f64>> {
        seeds.par_iter().map(|&s| run(da, batch, eta, s)).collect()
    };
    let naive_mb = collect(false, Batch::Mini(p.mb_batch), p.eta_mb);
    let da_mb = collect(true, Batch::Mini(p.mb_batch), p.eta_mb);
    let naive_fb = collect(false, Batch::Full, p.eta_fb);
    let da_fb = collect(true, Batch::Full, p.eta_fb);

    let drop = |c: &Vec<f64>| c[0] - c[1];
    let plateau = |c: &Vec<f64>| *c.last().unwrap();

    let mb_drop_naive = median(&naive_mb.iter().map(drop).collect::<Vec<_>>());
    let mb_drop_da = median(&da_mb.iter().map(drop).collect::<Vec<_>>());
    let mb_plat_naive = median(&naive_mb.iter().map(plateau).collect::<Vec<_>>());
    let mb_plat_da = median(&da_mb.iter().map(plateau).collect::<Vec<_>>());
    let mb_ok = mb_drop_da > mb_drop_naive && mb_plat_da > mb_plat_naive;

    let fb_rel_drop_diffs: Vec<f64> = naive_fb
        .iter()
        .zip(&da_fb)
        .map(|(n, d)| (drop(d) - drop(n)).abs() / drop(n))
        .collect();
    let fb_plat_ratio = median(&da_fb.iter().map(plateau).collect::<Vec<_>>())
        / median(&naive_fb.iter().map(plateau).collect::<Vec<_>>());
    let fb_ok = median(&fb_rel_drop_diffs) <= 0.10 && fb_plat_ratio >= 1.2;

    report(
        "9 network-replication",
        grad_ok && mb_ok && fb_ok,
        &format!(
            "fd worst {worst:.2e}; mb drop {mb_drop_da:.3} vs {mb_drop_naive:.3}, \
             plateau {mb_plat_da:.4} vs {mb_plat_naive:.4}; \
             fb drop med|rel diff| {:.3}, plateau ratio {fb_plat_ratio:.2}",
            median(&fb_rel_drop_diffs)
        ),
    );
}
