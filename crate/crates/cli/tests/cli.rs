//! End-to-end tests of the binary surface: subcommands, exit codes, output
//! files, and manifest-driven reproducibility.

use std::path::{Path, PathBuf};
use std::process::Command;

use dalab_cli::CliError;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dalab"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("dalab-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write(path: &Path, contents: &str) {
    std::fs::write(path, contents).unwrap();
}

#[test]
fn exit_code_mapping() {
    assert_eq!(CliError::Io("x".into()).exit_code(), 1);
    assert_eq!(CliError::Validation("x".into()).exit_code(), 2);
    assert_eq!(CliError::Divergence("x".into()).exit_code(), 3);
    assert_eq!(CliError::CertificateFailure("x".into()).exit_code(), 4);
}

#[test]
fn unknown_preset_lists_valid_names_and_exits_2() {
    let out = temp_dir("unknown-preset");
    let output = bin()
        .args(["run", "--preset", "nope", "--out"])
        .arg(&out)
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    for name in dalab_cli::presets::NAMES {
        assert!(stderr.contains(name), "stderr should list {name}: {stderr}");
    }
}

#[test]
fn run_without_preset_or_config_exits_2() {
    let output = bin().arg("run").output().expect("binary runs");
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn divergent_run_exits_3() {
    let out = temp_dir("divergent");
    let cfg = out.join("explode.json");
    write(
        &cfg,
        r#"{
  "dataset": {"synthetic": {"n": 10, "m": 4, "sigma_x": 0.5, "sigma": 0.2, "seed": 1}},
  "trainers": [{"regime": "naive", "criterion": "sse", "eta": 100.0, "epochs": 500}],
  "seeds": [1]
}"#,
    );
    let output = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("diverged"), "{stderr}");
}

#[test]
fn mb_without_rho_names_the_field() {
    let out = temp_dir("norho");
    let cfg = out.join("norho.json");
    write(
        &cfg,
        r#"{
  "dataset": {"synthetic": {"n": 10, "m": 4, "sigma_x": 0.5, "sigma": 0.2, "seed": 1}},
  "trainers": [{"regime": "naive", "criterion": "mb", "eta": 0.01, "epochs": 5}]
}"#,
    );
    let output = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("trainers[0].rho"), "{stderr}");
}

#[test]
fn da_regime_without_k_names_the_field() {
    let out = temp_dir("nok");
    let cfg = out.join("nok.json");
    write(
        &cfg,
        r#"{
  "dataset": {"synthetic": {"n": 10, "m": 4, "sigma_x": 0.5, "sigma": 0.2, "seed": 1}},
  "trainers": [{"regime": "da-online", "criterion": "sse", "eta": 0.001, "epochs": 5, "tau": 1.0}]
}"#,
    );
    let output = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("trainers[0].k"));
}

#[test]
fn csv_dataset_with_offline_mb_runs_end_to_end() {
    let out = temp_dir("csvmb");
    let data = out.join("data.csv");
    let mut csv = String::from("x1,x2,x3,t\n");
    // deterministic small regression table, 8 rows
    for i in 0..8 {
        let a = (i as f64) * 0.25 - 1.0;
        let b = ((i * 3 % 7) as f64) * 0.5 - 1.5;
        let c = ((i * 5 % 11) as f64) * 0.3 - 1.4;
        csv.push_str(&format!("{a},{b},{c},{}\n", a - b + 0.1 * c));
    }
    write(&data, &csv);
    let cfg = out.join("grid.json");
    write(
        &cfg,
        &format!(
            r#"{{
  "dataset": {{"csv": {{"path": {:?}, "target": "t", "standardize": true}}}},
  "trainers": [{{"regime": "da-offline", "criterion": "mb", "eta": 0.01, "epochs": 20,
                "rho": 2, "k": 2, "tau": 0.5}}],
  "seeds": [1, 2]
}}"#,
            data.display().to_string()
        ),
    );
    let output = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let dir = out.join("custom-grid");
    assert!(dir.join("manifest.json").is_file());
    let run = std::fs::read_to_string(dir.join("run00-da-offline-mb-seed1.csv")).unwrap();
    let mut lines = run.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epoch,regime,criterion,K,tau,eta,lambda,seed,mse_original"
    );
    assert_eq!(lines.count(), 21); // epochs 0..=20
}

#[test]
fn duplicate_seeds_are_accepted_and_suffixed() {
    let out = temp_dir("dup");
    let cfg = out.join("dup.json");
    write(
        &cfg,
        r#"{
  "dataset": {"synthetic": {"n": 10, "m": 4, "sigma_x": 0.5, "sigma": 0.2, "seed": 1}},
  "trainers": [{"regime": "naive", "criterion": "sse", "eta": 0.001, "epochs": 3}],
  "seeds": [7, 7]
}"#,
    );
    let output = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let dir = out.join("custom-dup");
    assert!(dir.join("run00-naive-sse-seed7.csv").is_file());
    assert!(dir.join("run00-naive-sse-seed7-2.csv").is_file());
}

#[test]
fn config_can_name_a_preset_with_overrides() {
    let out = temp_dir("preset-override");
    let cfg = out.join("short2d.json");
    write(
        &cfg,
        r#"{
  "preset": "fig2d",
  "overrides": {"epochs": 50, "tau": 0.5},
  "seeds": [1, 2]
}"#,
    );
    let output = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let dir = out.join("custom-short2d");
    let online = std::fs::read_to_string(dir.join("da-online.csv")).unwrap();
    // 2 seeds x epochs 0..=50 plus the header
    assert_eq!(online.lines().count(), 1 + 2 * 51);
    assert!(
        online.lines().nth(1).unwrap().contains(",0.5,"),
        "overridden tau echoed"
    );
}

#[test]
fn preset_override_rejects_inapplicable_field() {
    let out = temp_dir("bad-override");
    let cfg = out.join("bad.json");
    write(
        &cfg,
        r#"{"preset": "fig2a", "overrides": {"mb_batch": 10}, "seeds": [1]}"#,
    );
    let output = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("overrides.mb_batch"));
}

#[test]
fn config_rejects_preset_plus_inline_grid() {
    let out = temp_dir("both");
    let cfg = out.join("both.json");
    write(
        &cfg,
        r#"{
  "preset": "fig2a",
  "dataset": {"synthetic": {"n": 10, "m": 4, "sigma_x": 0.5, "sigma": 0.2, "seed": 1}},
  "trainers": [{"regime": "naive", "criterion": "sse", "eta": 0.001, "epochs": 5}]
}"#,
    );
    let output = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn preset_rerun_reproduces_byte_identical_outputs() {
    let out_a = temp_dir("repro-a");
    let out_b = temp_dir("repro-b");
    for out in [&out_a, &out_b] {
        let output = bin()
            .args(["run", "--preset", "fig2d", "--seeds", "3,9", "--out"])
            .arg(out)
            .output()
            .unwrap();
        assert_eq!(
            output.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&output.stderr)
        );
    }
    for file in [
        "manifest.json",
        "naive.csv",
        "ridge.csv",
        "da-offline.csv",
        "da-online.csv",
        "summary.csv",
    ] {
        let a = std::fs::read(out_a.join("fig2d").join(file)).unwrap();
        let b = std::fs::read(out_b.join("fig2d").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between reruns");
    }
}

#[test]
fn manifest_is_written_before_runs_and_lists_outputs() {
    // a diverging grid still leaves the manifest behind
    let out = temp_dir("manifest-first");
    let cfg = out.join("explode.json");
    write(
        &cfg,
        r#"{
  "dataset": {"synthetic": {"n": 10, "m": 4, "sigma_x": 0.5, "sigma": 0.2, "seed": 1}},
  "trainers": [{"regime": "naive", "criterion": "sse", "eta": 100.0, "epochs": 500}],
  "seeds": [1]
}"#,
    );
    let output = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3));
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("custom-explode/manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["rng"], dalab::numkit::RNG_IDENT);
    assert!(manifest["outputs"].as_array().unwrap().len() == 1);
}

#[test]
fn verify_quick_suite_passes_and_writes_report() {
    let report = dalab_cli::verify::run_verify(dalab_cli::verify::Level::Quick).unwrap();
    assert!(report.all_pass(), "failing: {:?}", report.failing_ids());
    assert!(report.certificates.len() >= 10);
    let dir = temp_dir("verify-report");
    let files = dalab_cli::verify::write_report(&report, &dir).unwrap();
    assert_eq!(
        files,
        vec!["report.txt".to_string(), "certificates.csv".to_string()]
    );
    let txt = std::fs::read_to_string(dir.join("report.txt")).unwrap();
    assert!(txt.lines().count() == report.certificates.len() + 1);
    assert!(txt.contains("failed=0"));
    let csv = std::fs::read_to_string(dir.join("certificates.csv")).unwrap();
    assert!(csv.starts_with("claim_id,n_draws,threshold,coordinate,"));
}

#[test]
fn env_var_sets_default_out_root() {
    let resolved = dalab_cli::runner::resolve_out_root(Some(PathBuf::from("explicit")));
    assert_eq!(resolved, PathBuf::from("explicit"));
    // without a flag the env var decides; set for this process only
    std::env::set_var("DALAB_OUT", "/tmp/dalab-env-root");
    assert_eq!(
        dalab_cli::runner::resolve_out_root(None),
        PathBuf::from("/tmp/dalab-env-root")
    );
    std::env::remove_var("DALAB_OUT");
}
