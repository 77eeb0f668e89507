//! Channelized Hotelling scoring of wall-specific detection tasks.

use serde::{Deserialize, Serialize};
use taskdn_core::channels::{extract_roi, roi_features, ChannelSet};
use taskdn_core::evalmetrics::auc_mann_whitney;
use taskdn_core::image::Image3D;
use taskdn_core::observer::{loo_scores, FeatureSet, Label, Ridge};
use taskdn_core::phantom::Wall;

use crate::error::{HarnessError, Result};

/// One observer reading, as persisted in the score CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub sample_id: usize,
    pub study_id: usize,
    pub defect_type: String,
    pub wall: Wall,
    pub label: Label,
    pub score: f64,
}

/// Observer input for one image: its features plus bookkeeping.
#[derive(Debug, Clone)]
pub struct Reading {
    pub sample_id: usize,
    pub study_id: usize,
    pub defect_type: String,
    pub features: Vec<f64>,
}

pub fn features(ch: &ChannelSet, img: &Image3D, centroid: [usize; 3]) -> Result<Vec<f64>> {
    Ok(roi_features(ch, &extract_roi(img, centroid))?.0)
}

/// Leave-one-out scores for one wall; rows list present cases first.
pub fn score_wall(wall: Wall, present: &[Reading], absent: &[Reading], ridge: Ridge) -> Result<Vec<ScoreRow>> {
    let set = |label, r: &[Reading]| FeatureSet::new(label, r.iter().map(|x| x.features.clone()).collect());
    let loo = loo_scores(&set(Label::DefectPresent, present)?, &set(Label::DefectAbsent, absent)?, ridge)
        .map_err(|e| HarnessError::from(e).context(format!("{wall} observer")))?;
    let rows = |label, r: &[Reading], s: &[f64]| {
        r.iter()
            .zip(s)
            .map(|(x, &score)| ScoreRow {
                sample_id: x.sample_id,
                study_id: x.study_id,
                defect_type: x.defect_type.clone(),
                wall,
                label,
                score,
            })
            .collect::<Vec<_>>()
    };
    let mut out = rows(Label::DefectPresent, present, &loo.present);
    out.extend(rows(Label::DefectAbsent, absent, &loo.absent));
    Ok(out)
}

pub fn split_scores(rows: &[ScoreRow]) -> (Vec<f64>, Vec<f64>) {
    let pick = |l| rows.iter().filter(|r| r.label == l).map(|r| r.score).collect();
    (pick(Label::DefectPresent), pick(Label::DefectAbsent))
}

pub fn auc_of(rows: &[ScoreRow]) -> Result<f64> {
    let (p, a) = split_scores(rows);
    Ok(auc_mann_whitney(&p, &a)?)
}

pub fn write_scores(path: &std::path::Path, rows: &[ScoreRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores(path: &std::path::Path) -> Result<Vec<ScoreRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
    r.deserialize().map(|x| x.map_err(HarnessError::from)).collect()
}
