//! Bundled experiment presets. Each linear preset runs four regimes on one
//! synthetic dataset: naive GD, the ridge rule with the derived equivalent
//! rate and lambda, and augmented training with off-line and on-line copies.
//! The learning rates are normalized so the naive curves coincide across
//! criteria: eta for SSE, eta*n for MSE, eta*Q for mini-batch.

use dalab::data::{AugmentationSpec, NoiseMode, SyntheticSpec};
use dalab::mlp::MlpSpec;
use dalab::trainers::{Criterion, Regime, TrainerConfig};

/// Seed of the preset datasets; runs vary only the noise/init seeds.
pub const DATASET_SEED: u64 = 42;

/// Noise/init seeds used when `--seeds` is not given.
pub const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

const BASE_RATE: f64 = 0.001;
const OVERPARAM_BASE_RATE: f64 = 0.0001;

/// One linear-regression experiment: dataset, criterion, rates, copies.
#[derive(Debug, Clone)]
pub struct LinearPreset {
    pub name: &'static str,
    pub synth: SyntheticSpec,
    pub criterion: Criterion,
    pub eta: f64,
    pub epochs: usize,
    pub k: usize,
    pub tau: f64,
    pub rho: Option<usize>,
}

impl LinearPreset {
    fn base(&self) -> TrainerConfig {
        TrainerConfig {
            regime: Regime::Naive,
            criterion: self.criterion,
            eta: self.eta,
            lambda: 0.0,
            epochs: self.epochs,
            partition: self.rho.map(|rho| {
                dalab::data::partition(self.synth.n, rho).expect("preset rho divides n")
            }),
            aug: None,
            w0: None,
        }
    }

    pub fn naive_config(&self) -> TrainerConfig {
        self.base()
    }

    /// The derived equivalent regularization strength.
    pub fn reg_lambda(&self) -> f64 {
        let kf = self.k as f64;
        match self.criterion {
            Criterion::Sse => kf * self.tau * self.tau / (kf + 1.0),
            Criterion::Mse | Criterion::Mb => {
                kf * self.tau * self.tau / ((kf + 1.0) * self.synth.n as f64)
            }
        }
    }

    /// The derived equivalent learning rate (the rate the ridge comparator
    /// actually applies).
    pub fn reg_eta(&self) -> f64 {
        match self.criterion {
            Criterion::Sse | Criterion::Mb => self.eta * (self.k as f64 + 1.0),
            Criterion::Mse => self.eta,
        }
    }

    /// The ridge comparator: explicit ridge for the full-batch criteria, the
    /// ridge-equivalent inner rule for mini-batch.
    pub fn reg_config(&self) -> TrainerConfig {
        let mut cfg = self.base();
        match self.criterion {
            Criterion::Sse | Criterion::Mse => {
                cfg.regime = Regime::Ridge;
                cfg.eta = self.reg_eta();
                cfg.lambda = self.reg_lambda();
            }
            Criterion::Mb => {
                cfg.regime = Regime::RidgeMbEquiv;
                cfg.aug = Some(self.aug(NoiseMode::OnLine, 0));
            }
        }
        cfg
    }

    pub fn aug(&self, mode: NoiseMode, seed: u64) -> AugmentationSpec {
        AugmentationSpec {
            k: self.k,
            tau: self.tau,
            mode,
            seed,
        }
    }

    pub fn da_config(&self, mode: NoiseMode, seed: u64) -> TrainerConfig {
        let mut cfg = self.base();
        cfg.regime = match mode {
            NoiseMode::OnLine => Regime::DaOnline,
            NoiseMode::OffLine => Regime::DaOffline,
            NoiseMode::NoNoise => Regime::Naive,
        };
        cfg.aug = Some(self.aug(mode, seed));
        cfg
    }
}

/// The network experiment: SGD with and without off-line copies, in both
/// full-batch and mini-batch form, on synthetic data.
#[derive(Debug, Clone)]
pub struct MlpPreset {
    pub name: &'static str,
    pub synth: SyntheticSpec,
    pub widths: Vec<usize>,
    pub k: usize,
    pub tau: f64,
    pub mb_batch: usize,
    pub eta_mb: f64,
    pub eta_fb: f64,
    pub epochs: usize,
}

impl MlpPreset {
    pub fn spec(&self, seed: u64) -> MlpSpec {
        MlpSpec::relu(self.widths.clone(), seed)
    }

    pub fn naive_aug(&self, seed: u64) -> AugmentationSpec {
        AugmentationSpec {
            k: 0,
            tau: 0.0,
            mode: NoiseMode::NoNoise,
            seed,
        }
    }

    pub fn da_aug(&self, seed: u64) -> AugmentationSpec {
        AugmentationSpec {
            k: self.k,
            tau: self.tau,
            mode: NoiseMode::OffLine,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Preset {
    Linear(LinearPreset),
    Mlp(MlpPreset),
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::Linear(p) => p.name,
            Preset::Mlp(p) => p.name,
        }
    }
}

fn small_synth() -> SyntheticSpec {
    SyntheticSpec {
        n: 20,
        m: 15,
        sigma_x: 0.5,
        sigma: 0.2,
        seed: DATASET_SEED,
    }
}

fn overparam_synth() -> SyntheticSpec {
    SyntheticSpec {
        n: 20,
        m: 100,
        sigma_x: 0.5,
        sigma: 0.2,
        seed: DATASET_SEED,
    }
}

pub const NAMES: [&str; 7] = [
    "fig2a",
    "fig2b",
    "fig2c",
    "fig2d",
    "fig3a",
    "fig3b",
    "fig4-synthetic",
];

pub fn find(name: &str) -> Option<Preset> {
    let p = match name {
        "fig2a" => Preset::Linear(LinearPreset {
            name: "fig2a",
            synth: small_synth(),
            criterion: Criterion::Sse,
            eta: BASE_RATE,
            epochs: 1000,
            k: 4,
            tau: 1.0,
            rho: None,
        }),
        "fig2b" => Preset::Linear(LinearPreset {
            name: "fig2b",
            synth: small_synth(),
            criterion: Criterion::Mse,
            eta: BASE_RATE * 20.0,
            epochs: 1000,
            k: 4,
            tau: 1.0,
            rho: None,
        }),
        "fig2c" => Preset::Linear(LinearPreset {
            name: "fig2c",
            synth: small_synth(),
            criterion: Criterion::Mb,
            eta: BASE_RATE * 4.0,
            epochs: 1000,
            k: 4,
            tau: 1.0,
            rho: Some(5),
        }),
        "fig2d" => Preset::Linear(LinearPreset {
            name: "fig2d",
            synth: small_synth(),
            criterion: Criterion::Mb,
            eta: BASE_RATE * 4.0,
            epochs: 1000,
            k: 1,
            tau: 1.0,
            rho: Some(5),
        }),
        "fig3a" => Preset::Linear(LinearPreset {
            name: "fig3a",
            synth: overparam_synth(),
            criterion: Criterion::Mb,
            eta: OVERPARAM_BASE_RATE * 4.0,
            epochs: 3000,
            k: 2,
            tau: 2.0,
            rho: Some(5),
        }),
        "fig3b" => Preset::Linear(LinearPreset {
            name: "fig3b",
            synth: overparam_synth(),
            criterion: Criterion::Mb,
            eta: OVERPARAM_BASE_RATE * 4.0,
            epochs: 3000,
            k: 5,
            tau: 2.0,
            rho: Some(5),
        }),
        "fig4-synthetic" => Preset::Mlp(MlpPreset {
            name: "fig4-synthetic",
            synth: SyntheticSpec {
                n: 80,
                m: 8,
                sigma_x: 0.5,
                sigma: 0.2,
                seed: DATASET_SEED,
            },
            widths: vec![8, 32, 32, 1],
            k: 2,
            tau: 1.0,
            mb_batch: 20,
            eta_mb: 0.01,
            eta_fb: 0.01,
            epochs: 800,
        }),
        _ => return None,
    };
    Some(p)
}
