//! JSON experiment configuration for `run --config`.
//!
//! A config either names a preset (optionally overriding its fields one by
//! one) or spells out a full grid: a dataset, a list of trainer
//! configurations, and the seed list; every run of an inline grid is one
//! (trainer, seed) pair. Validation reports schema violations with field
//! paths.

use std::path::Path;

use serde::{Deserialize, Serialize};

use dalab::data::{AugmentationSpec, Dataset, NoiseMode};
use dalab::trainers::{Criterion, Regime, TrainerConfig};

use crate::presets::{LinearPreset, MlpPreset, Preset, DEFAULT_SEEDS, NAMES};
use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Start from a named preset instead of an inline grid.
    #[serde(default)]
    pub preset: Option<String>,
    /// Field-by-field overrides of the named preset.
    #[serde(default)]
    pub overrides: Option<PresetOverrides>,
    #[serde(default)]
    pub dataset: Option<DatasetConfig>,
    #[serde(default)]
    pub trainers: Vec<TrainerEntry>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Output directory; overridden by --out.
    #[serde(default)]
    pub out: Option<String>,
}

/// Scalar preset fields that a config may override. Fields that do not
/// apply to the named preset are rejected with their path.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetOverrides {
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub rho: Option<usize>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default)]
    pub sigma_x: Option<f64>,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub dataset_seed: Option<u64>,
    #[serde(default)]
    pub eta_mb: Option<f64>,
    #[serde(default)]
    pub eta_fb: Option<f64>,
    #[serde(default)]
    pub mb_batch: Option<usize>,
}

impl PresetOverrides {
    fn apply_synth(&self, synth: &mut dalab::data::SyntheticSpec) {
        if let Some(n) = self.n {
            synth.n = n;
        }
        if let Some(m) = self.m {
            synth.m = m;
        }
        if let Some(s) = self.sigma_x {
            synth.sigma_x = s;
        }
        if let Some(s) = self.sigma {
            synth.sigma = s;
        }
        if let Some(s) = self.dataset_seed {
            synth.seed = s;
        }
    }

    fn reject(&self, field: &str, set: bool, preset: &str) -> Result<(), CliError> {
        if set {
            return Err(CliError::Validation(format!(
                "overrides.{field}: not applicable to preset {preset}"
            )));
        }
        Ok(())
    }

    pub fn apply_linear(&self, p: &mut LinearPreset) -> Result<(), CliError> {
        self.reject("eta_mb", self.eta_mb.is_some(), p.name)?;
        self.reject("eta_fb", self.eta_fb.is_some(), p.name)?;
        self.reject("mb_batch", self.mb_batch.is_some(), p.name)?;
        self.apply_synth(&mut p.synth);
        if let Some(v) = self.eta {
            p.eta = v;
        }
        if let Some(v) = self.epochs {
            p.epochs = v;
        }
        if let Some(v) = self.k {
            p.k = v;
        }
        if let Some(v) = self.tau {
            p.tau = v;
        }
        if let Some(v) = self.rho {
            if p.rho.is_none() {
                return Err(CliError::Validation(format!(
                    "overrides.rho: preset {} is full-batch",
                    p.name
                )));
            }
            p.rho = Some(v);
        }
        Ok(())
    }

    pub fn apply_mlp(&self, p: &mut MlpPreset) -> Result<(), CliError> {
        self.reject("eta", self.eta.is_some(), p.name)?;
        self.reject("rho", self.rho.is_some(), p.name)?;
        self.apply_synth(&mut p.synth);
        if let Some(v) = self.epochs {
            p.epochs = v;
        }
        if let Some(v) = self.k {
            p.k = v;
        }
        if let Some(v) = self.tau {
            p.tau = v;
        }
        if let Some(v) = self.eta_mb {
            p.eta_mb = v;
        }
        if let Some(v) = self.eta_fb {
            p.eta_fb = v;
        }
        if let Some(v) = self.mb_batch {
            p.mb_batch = v;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic {
        n: usize,
        m: usize,
        sigma_x: f64,
        sigma: f64,
        seed: u64,
    },
    Csv {
        path: String,
        target: String,
        #[serde(default)]
        standardize: bool,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerEntry {
    pub regime: String,
    pub criterion: String,
    pub eta: f64,
    pub epochs: usize,
    #[serde(default)]
    pub lambda: f64,
    /// Mini-batch size; required when criterion is "mb".
    #[serde(default)]
    pub rho: Option<usize>,
    /// Number of noisy copies; required for da-* and ridge-mb-equiv.
    #[serde(default)]
    pub k: Option<usize>,
    /// Noise scale; required for da-* and ridge-mb-equiv.
    #[serde(default)]
    pub tau: Option<f64>,
}

/// A loaded config resolved to what the runner executes.
#[derive(Debug, Clone)]
pub enum ResolvedConfig {
    /// A named preset, with overrides already applied.
    Preset(Preset),
    /// A full inline grid.
    Inline(ExperimentConfig),
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(&format!("reading {}", path.display()), e))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        match &cfg.preset {
            Some(_) => {
                if cfg.dataset.is_some() || !cfg.trainers.is_empty() {
                    return Err(CliError::Validation(
                        "preset: configs name a preset or spell out dataset/trainers, not both"
                            .into(),
                    ));
                }
            }
            None => {
                if cfg.overrides.is_some() {
                    return Err(CliError::Validation(
                        "overrides: only meaningful together with a preset".into(),
                    ));
                }
                if cfg.dataset.is_none() {
                    return Err(CliError::Validation(
                        "dataset: required unless a preset is named".into(),
                    ));
                }
                if cfg.trainers.is_empty() {
                    return Err(CliError::Validation("trainers: must not be empty".into()));
                }
            }
        }
        if cfg.seeds.is_empty() {
            cfg.seeds = DEFAULT_SEEDS.to_vec();
        }
        Ok(cfg)
    }

    /// Resolve a preset reference and its overrides, if any.
    pub fn resolve(&self) -> Result<ResolvedConfig, CliError> {
        match &self.preset {
            None => Ok(ResolvedConfig::Inline(self.clone())),
            Some(name) => {
                let preset = crate::presets::find(name).ok_or_else(|| {
                    CliError::Validation(format!(
                        "preset: unknown preset {name:?}; valid presets: {}",
                        NAMES.join(", ")
                    ))
                })?;
                let overrides = self.overrides.clone().unwrap_or_default();
                Ok(ResolvedConfig::Preset(match preset {
                    Preset::Linear(mut p) => {
                        overrides.apply_linear(&mut p)?;
                        Preset::Linear(p)
                    }
                    Preset::Mlp(mut p) => {
                        overrides.apply_mlp(&mut p)?;
                        Preset::Mlp(p)
                    }
                }))
            }
        }
    }

    pub fn build_dataset(&self) -> Result<Dataset, CliError> {
        match self
            .dataset
            .as_ref()
            .expect("inline configs carry a dataset")
        {
            DatasetConfig::Synthetic {
                n,
                m,
                sigma_x,
                sigma,
                seed,
            } => Ok(dalab::data::gen_synthetic(&dalab::data::SyntheticSpec {
                n: *n,
                m: *m,
                sigma_x: *sigma_x,
                sigma: *sigma,
                seed: *seed,
            })
            .map_err(|e| CliError::Validation(format!("dataset.synthetic: {e}")))?),
            DatasetConfig::Csv {
                path,
                target,
                standardize,
            } => {
                let d = dalab::data::load_csv(Path::new(path), target)
                    .map_err(|e| CliError::Validation(format!("dataset.csv: {e}")))?;
                if *standardize {
                    Ok(dalab::data::standardize(&d)
                        .map_err(|e| CliError::Validation(format!("dataset.csv: {e}")))?)
                } else {
                    Ok(d)
                }
            }
        }
    }
}

impl TrainerEntry {
    pub fn parse_regime(&self, index: usize) -> Result<Regime, CliError> {
        match self.regime.as_str() {
            "naive" => Ok(Regime::Naive),
            "ridge" => Ok(Regime::Ridge),
            "da-online" => Ok(Regime::DaOnline),
            "da-offline" => Ok(Regime::DaOffline),
            "ridge-mb-equiv" => Ok(Regime::RidgeMbEquiv),
            other => Err(CliError::Validation(format!(
                "trainers[{index}].regime: unknown regime {other:?} \
                 (expected naive | ridge | da-online | da-offline | ridge-mb-equiv)"
            ))),
        }
    }

    pub fn parse_criterion(&self, index: usize) -> Result<Criterion, CliError> {
        match self.criterion.as_str() {
            "sse" => Ok(Criterion::Sse),
            "mse" => Ok(Criterion::Mse),
            "mb" => Ok(Criterion::Mb),
            other => Err(CliError::Validation(format!(
                "trainers[{index}].criterion: unknown criterion {other:?} (expected sse | mse | mb)"
            ))),
        }
    }

    /// Resolve to a core trainer configuration for one run seed.
    pub fn resolve(&self, d: &Dataset, seed: u64, index: usize) -> Result<TrainerConfig, CliError> {
        let regime = self.parse_regime(index)?;
        let criterion = self.parse_criterion(index)?;
        let partition = match criterion {
            Criterion::Mb => {
                let rho = self.rho.ok_or_else(|| {
                    CliError::Validation(format!(
                        "trainers[{index}].rho: required for criterion mb"
                    ))
                })?;
                Some(
                    dalab::data::partition(d.n(), rho)
                        .map_err(|e| CliError::Validation(format!("trainers[{index}].rho: {e}")))?,
                )
            }
            _ => {
                if self.rho.is_some() {
                    return Err(CliError::Validation(format!(
                        "trainers[{index}].rho: only meaningful for criterion mb"
                    )));
                }
                None
            }
        };
        let aug = match regime {
            Regime::DaOnline | Regime::DaOffline | Regime::RidgeMbEquiv => {
                let k = self.k.ok_or_else(|| {
                    CliError::Validation(format!(
                        "trainers[{index}].k: required for regime {}",
                        self.regime
                    ))
                })?;
                let tau = self.tau.ok_or_else(|| {
                    CliError::Validation(format!(
                        "trainers[{index}].tau: required for regime {}",
                        self.regime
                    ))
                })?;
                let mode = match regime {
                    Regime::DaOffline => NoiseMode::OffLine,
                    _ => NoiseMode::OnLine,
                };
                Some(AugmentationSpec { k, tau, mode, seed })
            }
            _ => None,
        };
        Ok(TrainerConfig {
            regime,
            criterion,
            eta: self.eta,
            lambda: self.lambda,
            epochs: self.epochs,
            partition,
            aug,
            w0: None,
        })
    }
}
