//! Config-driven experiment pipeline: dataset synthesis, fold training with
//! lambda selection, test evaluation and reporting.

pub mod config;
pub mod crossval;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod models;
pub mod report;
pub mod scoring;

use std::path::Path;

pub use config::Config;
pub use error::{HarnessError, Result};

use dataset::DatasetManifest;

/// Every stage in order, for every configured dose level.
pub fn run_all(cfg: &Config, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let m = dataset::build_dataset(cfg, out)?;
    run_after_dataset(cfg, out, &m)
}

pub fn run_after_dataset(cfg: &Config, out: &Path, m: &DatasetManifest) -> Result<()> {
    for &dose in &cfg.study.dose_levels {
        crossval::run_crossval(cfg, out, m, dose)?;
        evaluate::run_evaluate(cfg, out, m, dose, None)?;
    }
    report::write_report(out, &cfg.study.dose_levels)?;
    Ok(())
}
