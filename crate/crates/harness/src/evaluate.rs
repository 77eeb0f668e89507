//! Test-set evaluation: observer AUCs, fidelity metrics, defect contrast and
//! qualitative dumps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use taskdn_core::evalmetrics::{auc_bootstrap_ci, paired_auc_diff, rmse, ssim, PairedDiff, SsimConfig};
use taskdn_core::image::Image3D;
use taskdn_core::par;
use taskdn_core::phantom::{defect_mask, DefectSpec, VoxelMask, Wall};
use taskdn_core::RngStream;

use crate::config::{tag, Config};
use crate::crossval::{load_selection, observer_channels, wall_readings};
use crate::dataset::{load_sample, lv_mask, DatasetManifest, SampleRecord, Split};
use crate::error::{HarnessError, Result};
use crate::models::{ensemble_denoise, load_fold_models};
use crate::scoring::{score_wall, split_scores, write_scores, ScoreRow};

pub const EVALUATION_FILE: &str = "evaluation.json";
const EVAL_STREAM: u64 = 0xe7a1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    NormalDose,
    LowDose,
    TaskAgnostic,
    TaskSpecific,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::NormalDose, Method::LowDose, Method::TaskAgnostic, Method::TaskSpecific];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::NormalDose => "normal_dose",
            Method::LowDose => "low_dose",
            Method::TaskAgnostic => "task_agnostic",
            Method::TaskSpecific => "task_specific",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucRow {
    pub dose_level: f64,
    pub method: Method,
    pub wall: Wall,
    pub auc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_present: usize,
    pub n_absent: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRow {
    pub dose_level: f64,
    pub wall: Wall,
    /// The difference is `AUC(b) - AUC(a)`.
    pub a: Method,
    pub b: Method,
    pub paired: PairedDiff,
    /// Lower bound of the one-sided interval at the configured confidence.
    pub one_sided_low: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityRow {
    pub dose_level: f64,
    pub method: Method,
    pub rmse: f64,
    pub ssim: f64,
    pub n_images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastRow {
    pub dose_level: f64,
    pub method: Method,
    pub severity: f64,
    pub mean_contrast: f64,
    pub n_images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub dose_level: f64,
    pub selected_lambda: f64,
    pub auc: Vec<AucRow>,
    pub paired: Vec<PairedRow>,
    pub fidelity: Vec<FidelityRow>,
    pub contrast: Vec<ContrastRow>,
}

impl Evaluation {
    pub fn auc_of(&self, method: Method, wall: Wall) -> Option<&AucRow> {
        self.auc.iter().find(|r| r.method == method && r.wall == wall)
    }
}

pub fn evaluation_dir(out: &Path, dose: f64) -> PathBuf {
    out.join("evaluation").join(format!("p{}", tag(dose)))
}

pub fn load_evaluation(out: &Path, dose: f64) -> Result<Evaluation> {
    let p = evaluation_dir(out, dose).join(EVALUATION_FILE);
    let text = std::fs::read_to_string(&p).map_err(|e| HarnessError::Data(format!("cannot read {} ({e})", p.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Relative uptake drop over the defect mask against the same sector on the
/// opposite wall: `1 - mean(defect) / mean(contralateral)`.
pub fn defect_contrast(img: &Image3D, defect: &VoxelMask, contralateral: &VoxelMask) -> f64 {
    let mean = |m: &VoxelMask| m.iter().map(|(x, y, s)| img.get(x, y, s)).sum::<f64>() / m.count() as f64;
    1.0 - mean(defect) / mean(contralateral)
}

fn opposite(w: Wall) -> Wall {
    match w {
        Wall::Anterior => Wall::Inferior,
        Wall::Inferior => Wall::Anterior,
    }
}

/// Images of one test case under every method.
struct CaseImages {
    normal: Image3D,
    images: Vec<Image3D>,
}

fn pgm(img: &Image3D, s: usize, max: f64) -> Vec<u8> {
    let (w, h, _) = img.dims();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            out.push((img.get(x, y, s) / max * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

pub fn run_evaluate(cfg: &Config, out: &Path, m: &DatasetManifest, dose: f64, lambda: Option<f64>) -> Result<Evaluation> {
    m.check_leakage()?;
    let selected_lambda = match lambda {
        Some(l) => l,
        None => load_selection(out, dose)?.selected_lambda,
    };
    let agnostic = load_fold_models(out, dose, 0.0, cfg.study.folds)?;
    let specific = load_fold_models(out, dose, selected_lambda, cfg.study.folds)?;
    let dir = evaluation_dir(out, dose);
    std::fs::create_dir_all(&dir)?;

    let samples: Vec<&SampleRecord> = m.samples_in(Split::TestAbsent).chain(m.samples_in(Split::TestPresent)).collect();
    log::info!("evaluating dose {dose}, lambda {selected_lambda}: {} test images", samples.len());
    let cases: Vec<CaseImages> = par::try_map_range(samples.len(), |i| -> Result<CaseImages> {
        let x = load_sample(out, samples[i], dose)?;
        let a = ensemble_denoise(&agnostic, &x.low)?;
        let t = ensemble_denoise(&specific, &x.low)?;
        Ok(CaseImages { images: vec![x.normal.clone(), x.low, a, t], normal: x.normal })
    })?;

    let ch = observer_channels(cfg)?;
    let root = RngStream::new(cfg.seed, EVAL_STREAM).derive_path(&[dose.to_bits()]);
    let ev = &cfg.eval;
    let mut auc = Vec::new();
    let mut paired = Vec::new();
    for (wi, &wall) in Wall::ALL.iter().enumerate() {
        let mut per_method: Vec<Vec<ScoreRow>> = Vec::new();
        for (mi, &method) in Method::ALL.iter().enumerate() {
            let imgs: Vec<Image3D> = cases.iter().map(|c| c.images[mi].clone()).collect();
            let readings = wall_readings(m, &ch, &samples, &imgs)?;
            let (_, pr, ab) = readings.into_iter().find(|r| r.0 == wall).expect("both walls are scored");
            let rows = score_wall(wall, &pr, &ab, ev.ridge).map_err(|e| e.context(method.as_str()))?;
            write_scores(&dir.join(format!("scores_{}_{wall}.csv", method.as_str())), &rows)?;
            let (p, a) = split_scores(&rows);
            let r = auc_bootstrap_ci(&p, &a, ev.n_boot, ev.ci_level, root.derive_path(&[wi as u64, mi as u64]))?;
            auc.push(AucRow { dose_level: dose, method, wall, auc: r.auc, ci_low: r.ci_low, ci_high: r.ci_high, n_present: p.len(), n_absent: a.len() });
            per_method.push(rows);
        }
        let level = 2.0 * ev.paired_confidence - 1.0;
        for (a, b) in [(Method::LowDose, Method::TaskSpecific), (Method::TaskAgnostic, Method::TaskSpecific), (Method::TaskSpecific, Method::NormalDose)] {
            let (pa, aa) = split_scores(&per_method[a as usize]);
            let (pb, ab) = split_scores(&per_method[b as usize]);
            let d = paired_auc_diff(&pa, &aa, &pb, &ab, ev.n_boot, level, root.derive_path(&[wi as u64, 100 + a as u64, b as u64]))?;
            paired.push(PairedRow { dose_level: dose, wall, a, b, one_sided_low: d.ci_low, paired: d });
        }
    }

    let mut fidelity = Vec::new();
    for &method in &Method::ALL[1..] {
        let mi = method as usize;
        let per: Vec<(f64, f64)> = par::try_map_range(cases.len(), |i| -> Result<(f64, f64)> {
            let c = &cases[i];
            let (lo, hi) = c.normal.as_slice().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
            let scfg = SsimConfig { data_range: Some(ev.ssim.data_range.unwrap_or(hi - lo)), ..ev.ssim.clone() };
            Ok((rmse(&c.images[mi], &c.normal)?, ssim(&c.images[mi], &c.normal, &scfg)?))
        })?;
        let n = per.len() as f64;
        fidelity.push(FidelityRow {
            dose_level: dose,
            method,
            rmse: per.iter().map(|p| p.0).sum::<f64>() / n,
            ssim: per.iter().map(|p| p.1).sum::<f64>() / n,
            n_images: per.len(),
        });
    }

    let severe = taskdn_core::phantom::SEVERITIES.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut masks = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let Some(d) = s.defect.as_ref().filter(|d| d.severity == severe) else { continue };
        let lv = lv_mask(&m.study(s.study_id)?.geometry);
        let own = defect_mask(&lv, d)?.mask;
        let other = defect_mask(&lv, &DefectSpec { wall: opposite(d.wall), ..d.clone() })?.mask;
        masks.push((i, own, other));
    }
    let mut contrast = Vec::new();
    for method in Method::ALL {
        let v: Vec<f64> = masks.iter().map(|(i, own, other)| defect_contrast(&cases[*i].images[method as usize], own, other)).collect();
        contrast.push(ContrastRow {
            dose_level: dose,
            method,
            severity: severe,
            mean_contrast: v.iter().sum::<f64>() / v.len().max(1) as f64,
            n_images: v.len(),
        });
    }

    write_qualitative(&dir, &samples, &cases, ev.n_qualitative)?;
    let eval = Evaluation { dose_level: dose, selected_lambda, auc, paired, fidelity, contrast };
    std::fs::write(dir.join(EVALUATION_FILE), serde_json::to_string_pretty(&eval)? + "\n")?;
    Ok(eval)
}

/// Centroid slices of the first severe defects, one PGM per method, all on
/// the normal-dose display scale.
fn write_qualitative(dir: &Path, samples: &[&SampleRecord], cases: &[CaseImages], n: usize) -> Result<()> {
    let qdir = dir.join("qualitative");
    std::fs::create_dir_all(&qdir)?;
    let mut index = String::from("sample_id,study_id,defect_type,slice,method,file\n");
    let picks = samples.iter().enumerate().filter(|(_, s)| s.defect.as_ref().is_some_and(|d| d.severity >= 0.25)).take(n);
    for (i, s) in picks {
        let slice = s.centroid.map_or(0, |c| c[2]);
        let max = cases[i].normal.slice(slice).as_slice().iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        for method in Method::ALL {
            let file = format!("sample{:04}_{}.pgm", s.sample_id, method.as_str());
            std::fs::write(qdir.join(&file), pgm(&cases[i].images[method as usize], slice, max))?;
            let _ = writeln!(index, "{},{},{},{slice},{},{file}", s.sample_id, s.study_id, s.defect_type, method.as_str());
        }
    }
    std::fs::write(qdir.join("index.csv"), index)?;
    Ok(())
}
