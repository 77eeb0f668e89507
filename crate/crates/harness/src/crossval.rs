//! Lambda selection by fold-model observer studies on the validation studies.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use taskdn_core::channels::{build_channels, ChannelSet, ROI_SIZE};
use taskdn_core::denoiser::{denoise, Params};
use taskdn_core::image::Image3D;
use taskdn_core::par;
use taskdn_core::phantom::Wall;

use crate::config::{tag, Config};
use crate::dataset::{load_sample, observer_centroid, DatasetManifest, SampleRecord, Split};
use crate::error::{HarnessError, Result};
use crate::models::train_fold_models;
use crate::scoring::{auc_of, features, score_wall, write_scores, Reading};

pub const SELECTION_FILE: &str = "selection.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAuc {
    pub fold: usize,
    pub wall: Wall,
    pub auc: f64,
    pub scores_path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaResult {
    pub lambda: f64,
    pub folds: Vec<FoldAuc>,
    pub mean_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub dose_level: f64,
    /// Validation AUC of the undenoised low-dose images, per wall.
    pub low_dose_auc: Vec<(Wall, f64)>,
    pub lambdas: Vec<LambdaResult>,
    pub selected_lambda: f64,
}

pub fn crossval_dir(out: &Path, dose: f64) -> PathBuf {
    out.join("crossval").join(format!("p{}", tag(dose)))
}

/// Argmax of the mean AUC; ties go to the smaller lambda.
pub fn select_lambda(results: &[LambdaResult]) -> Option<f64> {
    let mut best: Option<&LambdaResult> = None;
    for r in results {
        best = match best {
            Some(b) if r.mean_auc < b.mean_auc || (r.mean_auc == b.mean_auc && r.lambda >= b.lambda) => Some(b),
            _ => Some(r),
        };
    }
    best.map(|b| b.lambda)
}

pub fn load_selection(out: &Path, dose: f64) -> Result<Selection> {
    let p = crossval_dir(out, dose).join(SELECTION_FILE);
    let text = std::fs::read_to_string(&p)
        .map_err(|e| HarnessError::Data(format!("cannot read {} ({e}); run `taskdn crossval` or pass --lambda", p.display())))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn observer_channels(cfg: &Config) -> Result<ChannelSet> {
    Ok(build_channels(ROI_SIZE, &cfg.band_edges)?)
}

/// Observer readings of `images` (aligned with `samples`) for both walls:
/// present cases of that wall and every absent case at its canonical centre.
pub fn wall_readings(
    m: &DatasetManifest,
    ch: &ChannelSet,
    samples: &[&SampleRecord],
    images: &[Image3D],
) -> Result<Vec<(Wall, Vec<Reading>, Vec<Reading>)>> {
    Wall::ALL
        .iter()
        .map(|&wall| {
            let mut present = Vec::new();
            let mut absent = Vec::new();
            for (s, img) in samples.iter().zip(images) {
                if s.defect.is_some() && s.wall() != Some(wall) {
                    continue;
                }
                let c = observer_centroid(m.study(s.study_id)?, s, wall);
                let r = Reading { sample_id: s.sample_id, study_id: s.study_id, defect_type: s.defect_type.clone(), features: features(ch, img, c)? };
                if s.defect.is_some() { present.push(r) } else { absent.push(r) }
            }
            Ok((wall, present, absent))
        })
        .collect()
}

fn denoise_all(p: &Params<f32>, imgs: &[Image3D]) -> Result<Vec<Image3D>> {
    Ok(par::try_map_range(imgs.len(), |i| denoise(p, &imgs[i]))?)
}

pub fn run_crossval(cfg: &Config, out: &Path, m: &DatasetManifest, dose: f64) -> Result<Selection> {
    m.check_leakage()?;
    let dir = crossval_dir(out, dose);
    std::fs::create_dir_all(&dir)?;
    let ch = observer_channels(cfg)?;
    let samples: Vec<&SampleRecord> = m.samples_in(Split::Validation).collect();
    let low: Vec<Image3D> = samples.iter().map(|s| load_sample(out, s, dose).map(|x| x.low)).collect::<Result<_>>()?;
    let ridge = cfg.eval.ridge;

    let mut low_dose_auc = Vec::new();
    for (wall, p, a) in wall_readings(m, &ch, &samples, &low)? {
        low_dose_auc.push((wall, auc_of(&score_wall(wall, &p, &a, ridge)?)?));
    }

    let mut lambdas = Vec::new();
    let mut grid = cfg.study.lambda_grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    for &lambda in &grid {
        let models = train_fold_models(cfg, out, m, dose, lambda)?;
        let mut folds = Vec::new();
        for (fold, p) in models.iter().enumerate() {
            let den = denoise_all(p, &low).map_err(|e| e.context(format!("lambda {lambda}, fold {fold}")))?;
            for (wall, pr, ab) in wall_readings(m, &ch, &samples, &den)? {
                let rows = score_wall(wall, &pr, &ab, ridge).map_err(|e| e.context(format!("lambda {lambda}, fold {fold}")))?;
                let name = format!("lambda_{}_fold{fold}_{wall}.csv", tag(lambda));
                write_scores(&dir.join(&name), &rows)?;
                folds.push(FoldAuc { fold, wall, auc: auc_of(&rows)?, scores_path: name });
            }
        }
        let mean_auc = folds.iter().map(|f| f.auc).sum::<f64>() / folds.len() as f64;
        log::info!("dose {dose}: lambda {lambda} mean validation AUC {mean_auc:.4}");
        lambdas.push(LambdaResult { lambda, folds, mean_auc });
    }
    let selected_lambda = select_lambda(&lambdas).ok_or_else(|| HarnessError::Config("empty lambda grid".into()))?;
    let sel = Selection { dose_level: dose, low_dose_auc, lambdas, selected_lambda };
    std::fs::write(dir.join(SELECTION_FILE), serde_json::to_string_pretty(&sel)? + "\n")?;
    Ok(sel)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn res(lambda: f64, mean_auc: f64) -> LambdaResult {
        LambdaResult { lambda, folds: vec![], mean_auc }
    }

    #[test]
    fn selection_prefers_higher_auc_then_smaller_lambda() {
        assert_eq!(select_lambda(&[res(0.0, 0.7)]), Some(0.0));
        assert_eq!(select_lambda(&[res(0.0, 0.7), res(1.0, 0.8), res(2.0, 0.75)]), Some(1.0));
        assert_eq!(select_lambda(&[res(4.0, 0.8), res(0.5, 0.8), res(2.0, 0.6)]), Some(0.5));
        assert_eq!(select_lambda(&[]), None);
    }
}
