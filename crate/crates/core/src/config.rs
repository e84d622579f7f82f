//! Flat TOML run configuration and scenario files.
//!
//! A run config lists every hyperparameter, sampler and preprocessing field
//! at the top level; unknown keys are rejected so that a misspelled name
//! never silently falls back to a default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::PreprocessConfig;
use crate::model::Hyperparameters;
use crate::sampler::{GammaInit, ImputeMode, SamplerConfig};
use crate::simulation::{Design, ScenarioSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub nu: f64,
    pub omega: f64,
    pub tau2: f64,
    pub c: f64,
    /// Prior log odds shared by every feature.
    pub ising_a: f64,
    pub ising_double_count: bool,
    pub lod_scale: f64,

    pub n_iterations: usize,
    pub burn_in: usize,
    pub gamma_updates_per_sweep: Option<usize>,
    pub seed: u64,
    pub thin: usize,
    pub impute_mode: ImputeMode,
    pub store_traces: bool,
    pub gamma_init: GammaInit,

    pub prevalence_min: f64,
    pub mean_abundance_min: f64,
    pub pseudocount_factor: f64,
    pub standardize: bool,

    /// Modes fitted by `benchmark`.
    pub impute_modes: Vec<ImputeMode>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let hp = Hyperparameters::new(0);
        let sc = SamplerConfig::default();
        let pre = PreprocessConfig::default();
        RunConfig {
            nu: hp.nu,
            omega: hp.omega,
            tau2: hp.tau2,
            c: hp.c,
            ising_a: -12.0,
            ising_double_count: hp.ising_double_count,
            lod_scale: hp.lod_scale,
            n_iterations: sc.n_iterations,
            burn_in: sc.burn_in,
            gamma_updates_per_sweep: sc.gamma_updates_per_sweep,
            seed: sc.seed,
            thin: sc.thin,
            impute_mode: sc.impute_mode,
            store_traces: sc.store_traces,
            gamma_init: sc.gamma_init,
            prevalence_min: pre.prevalence_min,
            mean_abundance_min: pre.mean_abundance_min,
            pseudocount_factor: pre.pseudocount_factor,
            standardize: pre.standardize,
            impute_modes: vec![ImputeMode::Model, ImputeMode::Mean, ImputeMode::HalfMin],
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::input(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn hyperparameters(&self, p: usize) -> Hyperparameters {
        Hyperparameters {
            nu: self.nu,
            omega: self.omega,
            tau2: self.tau2,
            c: self.c,
            ising_a: vec![self.ising_a; p],
            ising_q: None,
            ising_double_count: self.ising_double_count,
            lod_scale: self.lod_scale,
        }
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            n_iterations: self.n_iterations,
            burn_in: self.burn_in,
            gamma_updates_per_sweep: self.gamma_updates_per_sweep,
            seed: self.seed,
            thin: self.thin,
            impute_mode: self.impute_mode,
            store_traces: self.store_traces,
            gamma_init: self.gamma_init,
        }
    }

    pub fn preprocess(&self) -> PreprocessConfig {
        PreprocessConfig {
            prevalence_min: self.prevalence_min,
            mean_abundance_min: self.mean_abundance_min,
            pseudocount_factor: self.pseudocount_factor,
            standardize: self.standardize,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hyperparameters(1).validate(1)?;
        self.sampler().validate()?;
        self.preprocess().validate()?;
        if self.impute_modes.is_empty() {
            return Err(Error::input("impute_modes must not be empty"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// A benchmark scenario: data-generation settings plus the fit config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub scenario: ScenarioSpec,
    /// Use the structured simulation Q; defaults to true for the dependent design.
    #[serde(default)]
    pub structured_q: Option<bool>,
    #[serde(default)]
    pub fit: RunConfig,
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ScenarioFile = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        file.scenario.validate()?;
        file.fit.validate()?;
        Ok(file)
    }

    pub fn uses_structured_q(&self) -> bool {
        self.structured_q.unwrap_or(self.scenario.design == Design::Dependent)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }
}
