//! The verification suite behind `dalab verify`: a fixed battery of
//! expected-update certificates plus the two rate claims, at 10^3 draws per
//! claim (quick) or 10^4 (full).
//!
//! Rate claims are encoded in the same certificate shape: the estimate is
//! the fitted log-log slope, the closed form is the theoretical slope, and
//! the standard error is the accepted band half-width divided by the z
//! threshold, so `z <= 5` is exactly "slope inside the band".

use std::path::Path;

use dalab::data::{gen_synthetic, partition, AugmentationSpec, Dataset, NoiseMode, SyntheticSpec};
use dalab::numkit::{sq_norm, GaussSource, Vector};
use dalab::oracle::{
    certify_expected_update, order_of_eta, rate_r_mse, Certificate, McStats, UpdateRule,
    Z_THRESHOLD,
};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Quick,
    Full,
}

impl Level {
    pub fn draws(&self) -> usize {
        match self {
            Level::Quick => 1_000,
            Level::Full => 10_000,
        }
    }

    pub fn parse(s: &str) -> Result<Level, CliError> {
        match s {
            "quick" => Ok(Level::Quick),
            "full" => Ok(Level::Full),
            other => Err(CliError::Validation(format!(
                "unknown level {other:?} (expected quick | full)"
            ))),
        }
    }
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Level::Quick => "quick",
            Level::Full => "full",
        })
    }
}

#[derive(Debug)]
pub struct VerifyReport {
    pub level: Level,
    pub certificates: Vec<Certificate>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.certificates.iter().all(|c| c.pass)
    }

    pub fn failing_ids(&self) -> Vec<&str> {
        self.certificates
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.claim_id.as_str())
            .collect()
    }
}

fn instance(n: usize, m: usize, data_seed: u64, w_seed: u64) -> (Dataset, Vector) {
    let d = gen_synthetic(&SyntheticSpec {
        n,
        m,
        sigma_x: 0.5,
        sigma: 0.2,
        seed: data_seed,
    })
    .expect("valid instance");
    let mut w = vec![0.0; m];
    GaussSource::new(w_seed, 0).fill_gauss(&mut w);
    (d, Vector::new(w))
}

fn band_certificate(
    claim_id: &str,
    slope: Option<f64>,
    center: f64,
    half_width: f64,
    n_draws: usize,
) -> Result<Certificate, CliError> {
    let slope = slope
        .ok_or_else(|| CliError::Validation(format!("{claim_id}: degenerate fit (zero errors)")))?;
    let stats = McStats {
        mean: Vector::new(vec![slope]),
        se: Vector::new(vec![half_width / Z_THRESHOLD]),
        n_draws,
    };
    Ok(Certificate::from_stats(
        claim_id,
        &stats,
        &Vector::new(vec![center]),
        Z_THRESHOLD,
    )?)
}

/// Run the whole battery. Deterministic: each claim uses pinned seeds.
pub fn run_verify(level: Level) -> Result<VerifyReport, CliError> {
    let draws = level.draws();
    let mut certificates = Vec::new();

    // expected-update claims on three full-batch instances
    let fb_instances: [(usize, usize, usize, f64, u64, u64); 3] = [
        (5, 3, 4, 1.0, 101, 201),
        (8, 4, 2, 0.5, 102, 202),
        (10, 5, 8, 2.0, 103, 203),
    ];
    for (i, (n, m, k, tau, ds, ws)) in fb_instances.into_iter().enumerate() {
        let (d, w) = instance(n, m, ds, ws);
        let aug = AugmentationSpec {
            k,
            tau,
            mode: NoiseMode::OnLine,
            seed: ds + 1000,
        };
        for rule in [UpdateRule::Sse, UpdateRule::Mse] {
            let mut cert = certify_expected_update(&d, &w, &aug, &rule, draws)?;
            cert.claim_id = format!("{}/{i:02}", cert.claim_id);
            certificates.push(cert);
        }
    }

    // expected-update claims on two mini-batch inner steps
    let mb_instances: [(usize, usize, usize, f64, usize, usize, f64, u64, u64); 2] = [
        (8, 2, 3, 1.0, 1, 0, 0.01, 104, 204),
        (10, 5, 2, 0.7, 2, 1, 0.02, 105, 205),
    ];
    for (i, (n, rho, k, tau, copy, block, eta, ds, ws)) in mb_instances.into_iter().enumerate() {
        let (d, w) = instance(n, 3, ds, ws);
        let aug = AugmentationSpec {
            k,
            tau,
            mode: NoiseMode::OnLine,
            seed: ds + 1000,
        };
        let rule = UpdateRule::Mb {
            partition: partition(n, rho).expect("valid instance"),
            copy,
            block,
            eta,
        };
        let mut cert = certify_expected_update(&d, &w, &aug, &rule, draws)?;
        cert.claim_id = format!("{}/{i:02}", cert.claim_id);
        certificates.push(cert);
    }

    // almost-sure limit rate: slope of |r_mse(K) - tau^2 w| vs K is ~ -1/2
    {
        let (d, w) = instance(20, 15, 106, 206);
        let w = w.scale(1.0 / sq_norm(&w).sqrt());
        let fit = rate_r_mse(&d, &w, 1.0, &[10, 100, 1000, 10_000], 306)?;
        certificates.push(band_certificate(
            "rate/r-mse-limit",
            fit.slope,
            -0.5,
            0.15,
            draws,
        )?);
    }

    // eta^2 truncation: slope of the DA-vs-ridge epoch deviation is ~ 2
    {
        let (d, _) = instance(20, 15, 107, 207);
        let part = partition(20, 5).expect("divides");
        let aug = AugmentationSpec {
            k: 4,
            tau: 1.0,
            mode: NoiseMode::OnLine,
            seed: 307,
        };
        let w0 = Vector::zeros(15);
        let fit = order_of_eta(&d, &part, &aug, &[1e-2, 5e-3, 2.5e-3], draws, &w0)?;
        certificates.push(band_certificate(
            "rate/mb-eta2-order",
            fit.slope,
            2.0,
            0.3,
            draws,
        )?);
    }

    Ok(VerifyReport {
        level,
        certificates,
    })
}

/// Write `report.txt` (one line per claim) and `certificates.csv`
/// (per-coordinate archive). Returns the file names written.
pub fn write_report(report: &VerifyReport, dir: &Path) -> Result<Vec<String>, CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::io(&format!("creating {}", dir.display()), e))?;

    let mut txt = String::new();
    for c in &report.certificates {
        txt.push_str(&c.report_line());
        txt.push('\n');
    }
    let failed = report.certificates.iter().filter(|c| !c.pass).count();
    txt.push_str(&format!(
        "level={} claims={} failed={}\n",
        report.level,
        report.certificates.len(),
        failed
    ));
    std::fs::write(dir.join("report.txt"), &txt)
        .map_err(|e| CliError::io("writing report.txt", e))?;

    let mut csv = String::from(
        "claim_id,n_draws,threshold,coordinate,mc_estimate,std_error,closed_form,z,verdict\n",
    );
    for c in &report.certificates {
        let zs = c.coordinate_zs();
        for j in 0..c.mc_estimate.len() {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                c.claim_id,
                c.n_draws,
                c.threshold,
                j,
                c.mc_estimate[j],
                c.std_error[j],
                c.closed_form[j],
                zs[j],
                if c.pass { "PASS" } else { "FAIL" }
            ));
        }
    }
    std::fs::write(dir.join("certificates.csv"), &csv)
        .map_err(|e| CliError::io("writing certificates.csv", e))?;

    Ok(vec!["report.txt".into(), "certificates.csv".into()])
}
