//! Fold-model training, checkpoint caching and ensemble denoising.

use std::path::{Path, PathBuf};

use serde::Serialize;
use taskdn_core::channels::build_channels;
use taskdn_core::denoiser::{denoise, read_checkpoint, train, write_checkpoint, LossConfig, Params, TrainConfig, TrainSample};
use taskdn_core::image::Image3D;
use taskdn_core::RngStream;

use crate::config::{tag, Config};
use crate::dataset::{lv_center, load_sample, DatasetManifest, Split};
use crate::error::{HarnessError, Result};

const TRAIN_STREAM: u64 = 0x7a17;

pub fn model_dir(out: &Path, dose: f64, lambda: f64) -> PathBuf {
    out.join("models").join(format!("p{}", tag(dose))).join(format!("lambda_{}", tag(lambda)))
}

pub fn checkpoint_path(out: &Path, dose: f64, lambda: f64, fold: usize) -> PathBuf {
    model_dir(out, dose, lambda).join(format!("fold{fold}.tdnw"))
}

/// Everything that determines a trained model; a cached checkpoint is reused
/// only when this matches exactly.
#[derive(Serialize)]
struct Fingerprint<'a> {
    dataset_seed: u64,
    count_factor: f64,
    dose: f64,
    lambda: f64,
    fold: usize,
    arch: &'a taskdn_core::denoiser::ArchConfig,
    train: &'a TrainConfig,
    loss: &'a crate::config::LossSettings,
    band_edges: &'a [f64],
    train_studies: Vec<usize>,
}

pub fn loss_config(cfg: &Config, lambda: f64) -> Result<LossConfig> {
    Ok(LossConfig {
        lambda,
        slice_half_width: cfg.loss.slice_half_width,
        channels: build_channels(cfg.train.crop.unwrap_or(cfg.phantom.grid), &cfg.band_edges)?,
        absent_policy: cfg.loss.absent_policy,
    })
}

/// Training pairs of every training-pool study outside `fold`.
pub fn fold_samples(dir: &Path, m: &DatasetManifest, dose: f64, fold: usize) -> Result<(Vec<TrainSample>, Vec<usize>)> {
    let mut studies = Vec::new();
    let mut out = Vec::new();
    for s in m.samples_in(Split::Train).filter(|s| s.fold != Some(fold)) {
        let study = m.study(s.study_id)?;
        if study.split != Split::Train {
            return Err(HarnessError::Data(format!("leakage: study {} is not a training study", s.study_id)));
        }
        if studies.last() != Some(&s.study_id) {
            studies.push(s.study_id);
        }
        let img = load_sample(dir, s, dose)?;
        out.push(TrainSample {
            low: img.low,
            normal: img.normal,
            centroid: s.centroid,
            absent_centroids: study.canonical_centroids.values().copied().collect(),
            lv_center: lv_center(&study.geometry),
        });
    }
    Ok((out, studies))
}

fn fold_train_config(cfg: &Config, fold: usize) -> TrainConfig {
    let seed = RngStream::new(cfg.seed, TRAIN_STREAM).derive_path(&[cfg.train.seed, fold as u64]).stream_id;
    TrainConfig { seed, ..cfg.train.clone() }
}

/// Trains (or loads cached) fold models for one dose level and lambda.
pub fn train_fold_models(cfg: &Config, out: &Path, m: &DatasetManifest, dose: f64, lambda: f64) -> Result<Vec<Params<f32>>> {
    let dir = model_dir(out, dose, lambda);
    std::fs::create_dir_all(&dir)?;
    let loss_cfg = loss_config(cfg, lambda)?;
    let mut models = Vec::with_capacity(cfg.study.folds);
    for fold in 0..cfg.study.folds {
        let (samples, studies) = fold_samples(out, m, dose, fold)?;
        let train_cfg = fold_train_config(cfg, fold);
        let fp = serde_json::to_string_pretty(&Fingerprint {
            dataset_seed: m.seed,
            count_factor: m.count_factor,
            dose,
            lambda,
            fold,
            arch: &cfg.arch,
            train: &train_cfg,
            loss: &cfg.loss,
            band_edges: &cfg.band_edges,
            train_studies: studies,
        })? + "\n";
        let ckpt = checkpoint_path(out, dose, lambda, fold);
        let fp_path = dir.join(format!("fold{fold}.json"));
        if ckpt.exists() && std::fs::read_to_string(&fp_path).ok().as_deref() == Some(fp.as_str()) {
            log::info!("reusing {}", ckpt.display());
            models.push(read_checkpoint(&ckpt)?);
            continue;
        }
        log::info!("training dose {dose} lambda {lambda} fold {fold}: {} samples, seed {}", samples.len(), train_cfg.seed);
        let (params, history) = train::<f32>(&samples, &cfg.arch, &loss_cfg, &train_cfg)
            .map_err(|e| HarnessError::from(e).context(format!("dose {dose}, lambda {lambda}, fold {fold}")))?;
        write_checkpoint(&ckpt, &params)?;
        std::fs::write(dir.join(format!("fold{fold}_history.csv")), history.to_csv())?;
        std::fs::write(&fp_path, fp)?;
        models.push(params);
    }
    Ok(models)
}

pub fn load_fold_models(out: &Path, dose: f64, lambda: f64, folds: usize) -> Result<Vec<Params<f32>>> {
    (0..folds)
        .map(|f| {
            let p = checkpoint_path(out, dose, lambda, f);
            if !p.exists() {
                return Err(HarnessError::Data(format!(
                    "missing checkpoint {}; run `taskdn train --dose {dose} --lambda {lambda}` (or crossval) first",
                    p.display()
                )));
            }
            Ok(read_checkpoint(&p)?)
        })
        .collect()
}

/// Mean of the fold models' outputs.
pub fn ensemble_denoise(models: &[Params<f32>], img: &Image3D) -> Result<Image3D> {
    let mut acc = vec![0.0; img.len()];
    for p in models {
        for (a, v) in acc.iter_mut().zip(denoise(p, img)?.as_slice()) {
            *a += v;
        }
    }
    let n = models.len() as f64;
    let (w, h, s) = img.dims();
    Ok(Image3D::from_vec(w, h, s, acc.into_iter().map(|v| v / n).collect())?)
}
