//! Executes presets and custom configs, writing a manifest first and then
//! long-format curve CSVs plus a curve-distance summary.
//!
//! Runs of one grid execute concurrently; files are assembled and written in
//! a fixed order afterwards, so output bytes do not depend on scheduling.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;

use dalab::data::{gen_synthetic, NoiseMode};
use dalab::mlp::{sgd_train, Batch};
use dalab::numkit::RNG_IDENT;
use dalab::oracle::curve_distance;
use dalab::trainers::{train, Criterion};

use crate::config::ExperimentConfig;
use crate::presets::{find, LinearPreset, MlpPreset, Preset, NAMES};
use crate::CliError;

/// Column layout of every curve CSV: one row per epoch per run.
pub const CURVE_HEADER: &str = "epoch,regime,criterion,K,tau,eta,lambda,seed,mse_original";

/// Where a run wrote its outputs.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub files: Vec<String>,
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    std::fs::write(dir.join(name), contents)
        .map_err(|e| CliError::io(&format!("writing {}", dir.join(name).display()), e))
}

fn manifest_json(
    mode: &str,
    preset: Option<&str>,
    config: serde_json::Value,
    seeds: &[u64],
    outputs: &[String],
) -> String {
    let mut text = serde_json::to_string_pretty(&json!({
        "artifact": format!("dalab {}", env!("CARGO_PKG_VERSION")),
        "rng": RNG_IDENT,
        "standardize_convention": "population",
        "mode": mode,
        "preset": preset,
        "config": config,
        "seeds": seeds,
        "outputs": outputs,
    }))
    .expect("manifest serializes");
    text.push('\n');
    text
}

/// One run's rows in the long-format curve schema.
#[allow(clippy::too_many_arguments)]
fn curve_rows(
    regime: &str,
    criterion: &str,
    k: usize,
    tau: f64,
    eta: f64,
    lambda: f64,
    seed: u64,
    curve: &[f64],
) -> String {
    let mut out = String::with_capacity(curve.len() * 48);
    for (epoch, mse) in curve.iter().enumerate() {
        out.push_str(&format!(
            "{epoch},{regime},{criterion},{k},{tau},{eta},{lambda},{seed},{mse}\n"
        ));
    }
    out
}

fn summary_csv(rows: &[(String, String, dalab::oracle::CurveDistance)]) -> String {
    let mut out = String::from("comparison,seed,max_abs,rms,tail_gap\n");
    for (comparison, seed, d) in rows {
        out.push_str(&format!(
            "{comparison},{seed},{},{},{}\n",
            d.max_abs, d.rms, d.tail_gap
        ));
    }
    out
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite metric"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn median_distance(ds: &[dalab::oracle::CurveDistance]) -> dalab::oracle::CurveDistance {
    dalab::oracle::CurveDistance {
        max_abs: median(&ds.iter().map(|d| d.max_abs).collect::<Vec<_>>()),
        rms: median(&ds.iter().map(|d| d.rms).collect::<Vec<_>>()),
        tail_gap: median(&ds.iter().map(|d| d.tail_gap).collect::<Vec<_>>()),
    }
}

/// Run one named preset, writing outputs under `out_root/<name>/`.
pub fn run_preset(name: &str, out_root: &Path, seeds: &[u64]) -> Result<RunArtifacts, CliError> {
    let preset = find(name).ok_or_else(|| {
        CliError::Validation(format!(
            "unknown preset {name:?}; valid presets: {}",
            NAMES.join(", ")
        ))
    })?;
    if seeds.is_empty() {
        return Err(CliError::Validation("seeds: must be nonempty".into()));
    }
    let dir = out_root.join(name);
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::io(&format!("creating {}", dir.display()), e))?;
    match preset {
        Preset::Linear(p) => run_linear_preset(&p, &dir, seeds),
        Preset::Mlp(p) => run_mlp_preset(&p, &dir, seeds),
    }
}

fn run_linear_preset(
    p: &LinearPreset,
    dir: &Path,
    seeds: &[u64],
) -> Result<RunArtifacts, CliError> {
    let files: Vec<String> = [
        "naive.csv",
        "ridge.csv",
        "da-offline.csv",
        "da-online.csv",
        "summary.csv",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let config = json!({
        "dataset": {"synthetic": {"n": p.synth.n, "m": p.synth.m, "sigma_x": p.synth.sigma_x,
                                   "sigma": p.synth.sigma, "seed": p.synth.seed}},
        "criterion": p.criterion.to_string(),
        "eta": p.eta,
        "epochs": p.epochs,
        "k": p.k,
        "tau": p.tau,
        "rho": p.rho,
        "reg_eta": p.reg_eta(),
        "reg_lambda": p.reg_lambda(),
    });
    write_file(
        dir,
        "manifest.json",
        &manifest_json("preset", Some(p.name), config, seeds, &files),
    )?;

    let d = gen_synthetic(&p.synth).map_err(CliError::from)?;
    let crit = p.criterion.to_string();

    // deterministic comparators once, augmented runs per seed
    let naive = train(&d, &p.naive_config())?;
    let ridge = train(&d, &p.reg_config())?;

    let da_runs: Vec<(NoiseMode, u64, Vec<f64>)> = seeds
        .par_iter()
        .flat_map(|&s| {
            [NoiseMode::OffLine, NoiseMode::OnLine]
                .into_par_iter()
                .map(move |mode| (mode, s))
        })
        .map(|(mode, s)| {
            let traj = train(&d, &p.da_config(mode, s))?;
            Ok::<_, CliError>((mode, s, traj.curve))
        })
        .collect::<Result<_, _>>()?;

    let mut naive_csv = String::from(CURVE_HEADER);
    naive_csv.push('\n');
    naive_csv.push_str(&curve_rows(
        "naive",
        &crit,
        0,
        0.0,
        p.eta,
        0.0,
        0,
        &naive.curve,
    ));
    write_file(dir, "naive.csv", &naive_csv)?;

    let reg_label = match p.criterion {
        Criterion::Mb => "ridge-mb-equiv",
        _ => "ridge",
    };
    let (reg_k, reg_tau) = match p.criterion {
        Criterion::Mb => (p.k, p.tau),
        _ => (0, 0.0),
    };
    let mut ridge_csv = String::from(CURVE_HEADER);
    ridge_csv.push('\n');
    ridge_csv.push_str(&curve_rows(
        reg_label,
        &crit,
        reg_k,
        reg_tau,
        p.reg_eta(),
        p.reg_lambda(),
        0,
        &ridge.curve,
    ));
    write_file(dir, "ridge.csv", &ridge_csv)?;

    let mut offline_csv = String::from(CURVE_HEADER);
    offline_csv.push('\n');
    let mut online_csv = String::from(CURVE_HEADER);
    online_csv.push('\n');
    for (mode, s, curve) in &da_runs {
        match mode {
            NoiseMode::OffLine => offline_csv.push_str(&curve_rows(
                "da-offline",
                &crit,
                p.k,
                p.tau,
                p.eta,
                0.0,
                *s,
                curve,
            )),
            NoiseMode::OnLine => online_csv.push_str(&curve_rows(
                "da-online",
                &crit,
                p.k,
                p.tau,
                p.eta,
                0.0,
                *s,
                curve,
            )),
            NoiseMode::NoNoise => unreachable!(),
        }
    }
    write_file(dir, "da-offline.csv", &offline_csv)?;
    write_file(dir, "da-online.csv", &online_csv)?;

    // joint curve-distance summary against the ridge comparator
    let mut rows = Vec::new();
    for wanted in [NoiseMode::OnLine, NoiseMode::OffLine] {
        let name = match wanted {
            NoiseMode::OnLine => "da-online-vs-ridge",
            _ => "da-offline-vs-ridge",
        };
        let mut dists = Vec::new();
        for (mode, s, curve) in &da_runs {
            if *mode == wanted {
                let dist = curve_distance(curve, &ridge.curve)?;
                rows.push((name.to_string(), s.to_string(), dist));
                dists.push(dist);
            }
        }
        rows.push((name.to_string(), "median".into(), median_distance(&dists)));
    }
    write_file(dir, "summary.csv", &summary_csv(&rows))?;

    Ok(RunArtifacts {
        dir: dir.to_path_buf(),
        files,
    })
}

fn run_mlp_preset(p: &MlpPreset, dir: &Path, seeds: &[u64]) -> Result<RunArtifacts, CliError> {
    let files: Vec<String> = [
        "sgd-fb.csv",
        "sgd-da-fb.csv",
        "sgd-mb.csv",
        "sgd-da-mb.csv",
        "summary.csv",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let config = json!({
        "dataset": {"synthetic": {"n": p.synth.n, "m": p.synth.m, "sigma_x": p.synth.sigma_x,
                                   "sigma": p.synth.sigma, "seed": p.synth.seed}},
        "widths": p.widths,
        "k": p.k,
        "tau": p.tau,
        "mb_batch": p.mb_batch,
        "eta_mb": p.eta_mb,
        "eta_fb": p.eta_fb,
        "epochs": p.epochs,
        "init": "weights N(0, 2/fan_in), biases 0",
    });
    write_file(
        dir,
        "manifest.json",
        &manifest_json("preset", Some(p.name), config, seeds, &files),
    )?;

    let d = gen_synthetic(&p.synth).map_err(CliError::from)?;

    // (file key, regime label, criterion label, da?, batch, eta)
    let variants: [(&str, &str, &str, bool, Batch, f64); 4] = [
        ("sgd-fb.csv", "sgd", "mse", false, Batch::Full, p.eta_fb),
        (
            "sgd-da-fb.csv",
            "sgd-da",
            "mse",
            true,
            Batch::Full,
            p.eta_fb,
        ),
        (
            "sgd-mb.csv",
            "sgd",
            "mb",
            false,
            Batch::Mini(p.mb_batch),
            p.eta_mb,
        ),
        (
            "sgd-da-mb.csv",
            "sgd-da",
            "mb",
            true,
            Batch::Mini(p.mb_batch),
            p.eta_mb,
        ),
    ];

    let runs: Vec<(usize, u64, Vec<f64>)> = variants
        .par_iter()
        .enumerate()
        .flat_map(|(vi, _)| seeds.par_iter().map(move |&s| (vi, s)))
        .map(|(vi, s)| {
            let (_, _, _, da, batch, eta) = variants[vi];
            let aug = if da { p.da_aug(s) } else { p.naive_aug(s) };
            let run = sgd_train(&d, &p.spec(s), &aug, batch, eta, p.epochs)?;
            Ok::<_, CliError>((vi, s, run.curve))
        })
        .collect::<Result<_, _>>()?;

    let mut by_variant: BTreeMap<usize, Vec<(u64, Vec<f64>)>> = BTreeMap::new();
    for (vi, s, curve) in runs {
        by_variant.entry(vi).or_default().push((s, curve));
    }
    for (vi, (file, regime, crit, da, _, eta)) in variants.iter().enumerate() {
        let mut csv = String::from(CURVE_HEADER);
        csv.push('\n');
        let (k, tau) = if *da { (p.k, p.tau) } else { (0, 0.0) };
        for (s, curve) in &by_variant[&vi] {
            csv.push_str(&curve_rows(regime, crit, k, tau, *eta, 0.0, *s, curve));
        }
        write_file(dir, file, &csv)?;
    }

    // per-seed DA vs naive distances, per batch mode
    let mut rows = Vec::new();
    for (name, da_vi, naive_vi) in [
        ("sgd-da-vs-sgd-mb", 3usize, 2usize),
        ("sgd-da-vs-sgd-fb", 1, 0),
    ] {
        let mut dists = Vec::new();
        for ((s, da_curve), (_, naive_curve)) in
            by_variant[&da_vi].iter().zip(&by_variant[&naive_vi])
        {
            let dist = curve_distance(da_curve, naive_curve)?;
            rows.push((name.to_string(), s.to_string(), dist));
            dists.push(dist);
        }
        rows.push((name.to_string(), "median".into(), median_distance(&dists)));
    }
    write_file(dir, "summary.csv", &summary_csv(&rows))?;

    Ok(RunArtifacts {
        dir: dir.to_path_buf(),
        files,
    })
}

/// Run a JSON config — a preset reference with overrides or a full inline
/// grid — writing outputs under `out_root/custom-<config stem>/` (or the
/// config's own `out` directory).
pub fn run_custom(
    config_path: &Path,
    out_root: &Path,
    seeds_override: Option<&[u64]>,
) -> Result<RunArtifacts, CliError> {
    let mut cfg = ExperimentConfig::load(config_path)?;
    if let Some(seeds) = seeds_override {
        if seeds.is_empty() {
            return Err(CliError::Validation("seeds: must be nonempty".into()));
        }
        cfg.seeds = seeds.to_vec();
    }
    let dir = match &cfg.out {
        Some(out) => PathBuf::from(out),
        None => {
            let stem = config_path
                .file_stem()
                .map(|s| s.to_string_lossy().to_string())
                .unwrap_or_else(|| "config".into());
            out_root.join(format!("custom-{stem}"))
        }
    };
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::io(&format!("creating {}", dir.display()), e))?;
    match cfg.resolve()? {
        crate::config::ResolvedConfig::Preset(Preset::Linear(p)) => {
            run_linear_preset(&p, &dir, &cfg.seeds)
        }
        crate::config::ResolvedConfig::Preset(Preset::Mlp(p)) => {
            run_mlp_preset(&p, &dir, &cfg.seeds)
        }
        crate::config::ResolvedConfig::Inline(cfg) => run_inline(&cfg, &dir),
    }
}

fn run_inline(cfg: &ExperimentConfig, dir: &Path) -> Result<RunArtifacts, CliError> {
    let d = cfg.build_dataset()?;

    // validate the full grid before writing anything
    let mut plan: Vec<(usize, u64, dalab::trainers::TrainerConfig)> = Vec::new();
    for (i, entry) in cfg.trainers.iter().enumerate() {
        for &s in &cfg.seeds {
            plan.push((i, s, entry.resolve(&d, s, i)?));
        }
    }

    // per-run files; duplicate names (duplicate seeds) get a numeric suffix
    let mut names: Vec<String> = Vec::with_capacity(plan.len());
    let mut used: BTreeMap<String, usize> = BTreeMap::new();
    for (i, s, _) in &plan {
        let entry = &cfg.trainers[*i];
        let base = format!("run{i:02}-{}-{}-seed{s}", entry.regime, entry.criterion);
        let count = used.entry(base.clone()).or_insert(0);
        *count += 1;
        let name = if *count == 1 {
            format!("{base}.csv")
        } else {
            format!("{base}-{count}.csv")
        };
        names.push(name);
    }

    let config_echo = serde_json::to_value(cfg).expect("config serializes");
    write_file(
        dir,
        "manifest.json",
        &manifest_json("custom", None, config_echo, &cfg.seeds, &names),
    )?;

    let curves: Vec<Vec<f64>> = plan
        .par_iter()
        .map(|(_, _, tc)| Ok::<_, CliError>(train(&d, tc)?.curve))
        .collect::<Result<_, _>>()?;

    for (((i, s, tc), name), curve) in plan.iter().zip(&names).zip(&curves) {
        let entry = &cfg.trainers[*i];
        let mut csv = String::from(CURVE_HEADER);
        csv.push('\n');
        let (k, tau) = tc.aug.as_ref().map(|a| (a.k, a.tau)).unwrap_or((0, 0.0));
        csv.push_str(&curve_rows(
            &entry.regime,
            &entry.criterion,
            k,
            tau,
            tc.eta,
            tc.lambda,
            *s,
            curve,
        ));
        write_file(dir, name, &csv)?;
    }

    Ok(RunArtifacts {
        dir: dir.to_path_buf(),
        files: names,
    })
}

/// Resolve the output root: `--out` flag, else `DALAB_OUT`, else `./out`.
pub fn resolve_out_root(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("DALAB_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}
