use std::path::Path;

use serde::{Deserialize, Serialize};
use taskdn_core::channels::DEFAULT_BAND_EDGES;
use taskdn_core::denoiser::{AbsentCentroidPolicy, ArchConfig, TrainConfig};
use taskdn_core::evalmetrics::SsimConfig;
use taskdn_core::observer::Ridge;
use taskdn_core::phantom::PhantomSpec;
use taskdn_core::simulate::{FilterConfig, Geometry, ReconConfig};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub n_train_studies: usize,
    pub n_val: usize,
    pub n_test_absent: usize,
    pub n_test_present_base: usize,
    pub dose_levels: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub folds: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            n_train_studies: 48,
            n_val: 12,
            n_test_absent: 24,
            n_test_present_base: 24,
            dose_levels: vec![0.125, 0.0625],
            lambda_grid: vec![0.0, 10.0, 30.0, 100.0, 300.0, 1000.0],
            folds: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionConfig {
    /// Expected normal-dose counts in the sinogram of a mid-ventricle slice
    /// of the reference (unjittered, defect-free) phantom.
    pub counts_per_slice: f64,
    pub geometry: Geometry,
    pub recon: ReconConfig,
    pub filter: FilterConfig,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self { counts_per_slice: 1.0e5, geometry: Geometry::default(), recon: ReconConfig::default(), filter: FilterConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSettings {
    pub slice_half_width: usize,
    pub absent_policy: AbsentCentroidPolicy,
}

impl Default for LossSettings {
    fn default() -> Self {
        Self { slice_half_width: 1, absent_policy: AbsentCentroidPolicy::CanonicalRandom }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_boot: usize,
    pub ci_level: f64,
    /// Confidence of the one-sided paired test of the denoised AUC gain.
    pub paired_confidence: f64,
    pub ridge: Ridge,
    pub ssim: SsimConfig,
    /// Qualitative dumps written per dose level.
    pub n_qualitative: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { n_boot: 2000, ci_level: 0.95, paired_confidence: 0.90, ridge: Ridge::default(), ssim: SsimConfig::default(), n_qualitative: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub out_dir: String,
    pub study: StudyConfig,
    pub phantom: PhantomSpec,
    pub acquisition: AcquisitionConfig,
    pub band_edges: Vec<f64>,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub loss: LossSettings,
    pub eval: EvalConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 2024,
            out_dir: "runs/default".into(),
            study: StudyConfig::default(),
            phantom: PhantomSpec::default(),
            acquisition: AcquisitionConfig::default(),
            band_edges: DEFAULT_BAND_EDGES.to_vec(),
            arch: ArchConfig::default(),
            train: TrainConfig { epochs: 20, ..TrainConfig::default() },
            loss: LossSettings::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(e.to_string())
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Config = serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.study;
        if s.n_train_studies == 0 || s.n_val < 3 || s.n_test_absent < 5 || s.n_test_present_base == 0 {
            return Err(config_err("study counts must be positive (at least 3 validation and 5 absent test studies for leave-one-out and bootstrap)"));
        }
        if s.folds < 2 || s.n_train_studies < s.folds {
            return Err(config_err("need at least two folds and one training study per fold"));
        }
        if s.dose_levels.is_empty() || s.dose_levels.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(config_err("dose levels must lie in (0, 1]"));
        }
        if s.lambda_grid.is_empty() || s.lambda_grid.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
            return Err(config_err("lambda grid must be nonempty and nonnegative"));
        }
        if !s.lambda_grid.contains(&0.0) {
            return Err(config_err("lambda grid must contain 0 (the task-agnostic reference)"));
        }
        if !(self.acquisition.counts_per_slice > 0.0) {
            return Err(config_err("counts_per_slice must be positive"));
        }
        self.phantom.validate().map_err(config_err)?;
        self.acquisition.geometry.validate().map_err(config_err)?;
        self.acquisition.recon.validate(&self.acquisition.geometry).map_err(config_err)?;
        self.acquisition.filter.validate().map_err(config_err)?;
        self.arch.validate().map_err(config_err)?;
        self.train.validate().map_err(config_err)?;
        if self.train.crop.is_some_and(|c| c > self.phantom.grid) {
            return Err(config_err("train.crop exceeds the phantom grid"));
        }
        if self.arch.n_slices != self.phantom.n_slices {
            return Err(config_err("arch.n_slices must equal phantom.n_slices"));
        }
        taskdn_core::channels::build_channels(taskdn_core::channels::ROI_SIZE, &self.band_edges).map_err(config_err)?;
        if self.eval.n_boot < 2 || !(self.eval.ci_level > 0.0 && self.eval.ci_level < 1.0) || !(self.eval.paired_confidence > 0.5 && self.eval.paired_confidence < 1.0) {
            return Err(config_err("invalid evaluation settings"));
        }
        Ok(())
    }

    pub fn out_dir(&self, override_dir: Option<&Path>) -> std::path::PathBuf {
        override_dir.map(Path::to_path_buf).unwrap_or_else(|| self.out_dir.clone().into())
    }

    /// Dose levels selected by `--dose`, or all configured levels.
    pub fn doses(&self, dose: Option<f64>) -> Result<Vec<f64>> {
        match dose {
            None => Ok(self.study.dose_levels.clone()),
            Some(p) if self.study.dose_levels.contains(&p) => Ok(vec![p]),
            Some(p) => Err(config_err(format!("dose {p} is not one of the configured levels {:?}", self.study.dose_levels))),
        }
    }
}

/// Stable directory tag for a dose level or lambda value, e.g. `0.0625`.
pub fn tag(v: f64) -> String {
    format!("{v}")
}
