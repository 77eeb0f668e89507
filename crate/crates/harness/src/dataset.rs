//! Study enumeration, per-sample simulation and the dataset manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use taskdn_core::image::Image3D;
use taskdn_core::io::{read_image, write_image};
use taskdn_core::phantom::{
    defect_mask, generate_phantom, insert_defect, remap_uptake, test_defect_types, training_defect_types, DefectSpec,
    LvMask, PhantomGeometry, Wall,
};
use taskdn_core::simulate::{binomial_thin, osem_reconstruct, poisson_counts, post_filter_volume, Projector};
use taskdn_core::{par, RngStream};

use crate::config::{tag, Config};
use crate::error::{HarnessError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const DATASET_STREAM: u64 = 0xda7a;
/// Extent of the hypothetical defect whose centroid places the observer ROI
/// on defect-absent studies.
pub const CANONICAL_EXTENT: f64 = 45.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    TestAbsent,
    TestPresent,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::TestAbsent => "test_absent",
            Split::TestPresent => "test_present",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub study_id: usize,
    pub split: Split,
    pub fold: Option<usize>,
    pub rng: RngStream,
    pub geometry: PhantomGeometry,
    /// Observer centre used when a sample of this study carries no defect.
    pub canonical_centroids: BTreeMap<Wall, [usize; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowDoseFile {
    pub dose_level: f64,
    pub path: String,
    pub rng: RngStream,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: usize,
    pub study_id: usize,
    pub split: Split,
    pub fold: Option<usize>,
    pub defect: Option<DefectSpec>,
    pub defect_type: String,
    pub centroid: Option<[usize; 3]>,
    pub normal_path: String,
    pub normal_rng: RngStream,
    pub low: Vec<LowDoseFile>,
}

impl SampleRecord {
    pub fn wall(&self) -> Option<Wall> {
        self.defect.as_ref().map(|d| d.wall)
    }

    pub fn low_path(&self, dose: f64) -> Result<&str> {
        self.low
            .iter()
            .find(|l| l.dose_level == dose)
            .map(|l| l.path.as_str())
            .ok_or_else(|| HarnessError::Data(format!("sample {} has no image at dose {dose}", self.sample_id)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    /// Expected normal-dose counts per unit of activity.
    pub count_factor: f64,
    pub dose_levels: Vec<f64>,
    pub studies: Vec<StudyRecord>,
    pub samples: Vec<SampleRecord>,
}

impl DatasetManifest {
    /// Every study belongs to one split, and every sample agrees with its study.
    pub fn check_leakage(&self) -> Result<()> {
        let mut split_of = BTreeMap::new();
        for s in &self.studies {
            if split_of.insert(s.study_id, s.split).is_some() {
                return Err(HarnessError::Data(format!("study {} listed twice", s.study_id)));
            }
        }
        for r in &self.samples {
            match split_of.get(&r.study_id) {
                Some(&sp) if sp == r.split => {}
                Some(&sp) => {
                    return Err(HarnessError::Data(format!(
                        "leakage: sample {} of study {} is in {} but its study is in {}",
                        r.sample_id,
                        r.study_id,
                        r.split.as_str(),
                        sp.as_str()
                    )))
                }
                None => return Err(HarnessError::Data(format!("sample {} refers to unknown study {}", r.sample_id, r.study_id))),
            }
        }
        Ok(())
    }

    pub fn study(&self, id: usize) -> Result<&StudyRecord> {
        self.studies.iter().find(|s| s.study_id == id).ok_or_else(|| HarnessError::Data(format!("unknown study {id}")))
    }

    pub fn samples_in(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| HarnessError::Data(format!("cannot read {} ({e}); run `taskdn dataset` first", path.display())))?;
        let m: DatasetManifest = serde_json::from_str(&text)?;
        m.check_leakage()?;
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.check_leakage()?;
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Observer centre for a sample: the defect centroid, or the canonical
/// centroid on `wall` for a defect-absent sample.
pub fn observer_centroid(study: &StudyRecord, sample: &SampleRecord, wall: Wall) -> [usize; 3] {
    sample.centroid.unwrap_or(study.canonical_centroids[&wall])
}

pub fn lv_center(geom: &PhantomGeometry) -> [usize; 3] {
    let [a, b] = geom.wall_slice_range;
    [geom.center[0].round() as usize, geom.center[1].round() as usize, (a + b) / 2]
}

pub fn lv_mask(geom: &PhantomGeometry) -> LvMask {
    geom.render().1
}

fn canonical_centroids(lv: &LvMask) -> Result<BTreeMap<Wall, [usize; 3]>> {
    Wall::ALL
        .iter()
        .map(|&w| Ok((w, defect_mask(lv, &DefectSpec::new(w, CANONICAL_EXTENT, 0.0))?.centroid)))
        .collect()
}

struct StudyPlan {
    id: usize,
    split: Split,
    fold: Option<usize>,
    defects: Vec<Option<DefectSpec>>,
}

fn plan_studies(cfg: &Config) -> Vec<StudyPlan> {
    let s = &cfg.study;
    let with_absent = |types: Vec<DefectSpec>| std::iter::once(None).chain(types.into_iter().map(Some)).collect::<Vec<_>>();
    let mut out = Vec::new();
    let mut push = |n: usize, split: Split, defects: Vec<Option<DefectSpec>>, folds: bool| {
        for k in 0..n {
            let id = out.len();
            out.push(StudyPlan { id, split, fold: folds.then_some(k % s.folds), defects: defects.clone() });
        }
    };
    push(s.n_train_studies, Split::Train, with_absent(training_defect_types()), true);
    push(s.n_val, Split::Validation, with_absent(training_defect_types()), false);
    push(s.n_test_absent, Split::TestAbsent, vec![None], false);
    push(s.n_test_present_base, Split::TestPresent, test_defect_types().into_iter().map(Some).collect(), false);
    out
}

/// Shared simulation state: projector and the counts-per-activity factor.
pub struct Simulator {
    cfg: Config,
    projector: Projector,
    pub count_factor: f64,
}

impl Simulator {
    pub fn new(cfg: &Config) -> Result<Self> {
        let ph = &cfg.phantom;
        let projector = Projector::new(&cfg.acquisition.geometry, ph.grid, ph.grid)?;
        // reference: the unjittered defect-free phantom, middle wall slice
        let reference = taskdn_core::phantom::PhantomSpec { jitter: taskdn_core::phantom::Jitter::none(), ..ph.clone() };
        let img = generate_phantom(&reference, RngStream::new(0, 0))?.image;
        let [a, b] = ph.wall_slice_range;
        let total = projector.forward(&img.slice((a + b) / 2))?.sum();
        if !(total > 0.0) {
            return Err(HarnessError::Config("reference slice has no activity".into()));
        }
        Ok(Self { cfg: cfg.clone(), projector, count_factor: cfg.acquisition.counts_per_slice / total })
    }

    /// Noisy reconstructions of `truth`: the normal-dose image and one image
    /// per dose level, all in activity units.
    pub fn acquire(&self, truth: &Image3D, lv: &LvMask, normal_rng: RngStream, low_rngs: &[RngStream]) -> Result<(Image3D, Vec<Image3D>)> {
        let acq = &self.cfg.acquisition;
        let doses = &self.cfg.study.dose_levels;
        let n = truth.n_slices();
        let mut normal = Vec::with_capacity(n);
        let mut low: Vec<Vec<_>> = vec![Vec::with_capacity(n); doses.len()];
        for s in 0..n {
            let expected = self.projector.forward(&truth.slice(s))?;
            let scale = expected.sum() * self.count_factor;
            let counts = if scale > 0.0 { poisson_counts(&expected, scale, normal_rng.derive(s as u64))? } else { expected };
            let recon = |sino: &taskdn_core::Sinogram, norm: f64| -> Result<_> {
                let r = osem_reconstruct(sino, &self.projector, &acq.recon)?.image;
                Ok(r.map(|v| v / norm))
            };
            normal.push(recon(&counts, self.count_factor)?);
            for (d, &p) in doses.iter().enumerate() {
                let thinned = binomial_thin(&counts, p, low_rngs[d].derive(s as u64))?;
                low[d].push(recon(&thinned, self.count_factor * p)?);
            }
        }
        let finish = |slices: Vec<_>| -> Result<Image3D> {
            let vol = Image3D::from_slices(&slices)?;
            let filtered = post_filter_volume(&vol, &acq.filter)?;
            Ok(remap_uptake(&filtered, &lv.mask)?.to_f32_precision())
        };
        let normal = finish(normal)?;
        let low = low.into_iter().map(finish).collect::<Result<Vec<_>>>()?;
        Ok((normal, low))
    }
}

fn study_dir(id: usize) -> String {
    format!("data/study_{id:03}")
}

/// Simulates every sample, writes the volumes under `out` and returns the
/// manifest (also written to `out`).
pub fn build_dataset(cfg: &Config, out: &Path) -> Result<DatasetManifest> {
    let sim = Simulator::new(cfg)?;
    let root = RngStream::new(cfg.seed, DATASET_STREAM);
    let plans = plan_studies(cfg);
    log::info!("dataset: {} studies, root stream {:?}, count factor {:.4}", plans.len(), root, sim.count_factor);

    let studies: Vec<(StudyRecord, Vec<SampleRecord>)> = par::try_map_range(plans.len(), |i| {
        simulate_study(cfg, &sim, &plans[i], root.derive(plans[i].id as u64), out)
            .map_err(|e| e.context(format!("study {}", plans[i].id)))
    })?;

    let mut manifest = DatasetManifest {
        seed: cfg.seed,
        count_factor: sim.count_factor,
        dose_levels: cfg.study.dose_levels.clone(),
        studies: Vec::new(),
        samples: Vec::new(),
    };
    for (study, samples) in studies {
        manifest.studies.push(study);
        for mut s in samples {
            s.sample_id = manifest.samples.len();
            manifest.samples.push(s);
        }
    }
    manifest.save(out)?;
    Ok(manifest)
}

fn simulate_study(cfg: &Config, sim: &Simulator, plan: &StudyPlan, rng: RngStream, out: &Path) -> Result<(StudyRecord, Vec<SampleRecord>)> {
    let phantom = generate_phantom(&cfg.phantom, rng.derive(0))?;
    log::debug!("study {}: phantom stream {:?}", plan.id, rng.derive(0));
    let study = StudyRecord {
        study_id: plan.id,
        split: plan.split,
        fold: plan.fold,
        rng,
        geometry: phantom.geometry.clone(),
        canonical_centroids: canonical_centroids(&phantom.lv)?,
    };
    let dir = study_dir(plan.id);
    std::fs::create_dir_all(out.join(&dir))?;
    let mut samples = Vec::with_capacity(plan.defects.len());
    for (k, defect) in plan.defects.iter().enumerate() {
        let (truth, centroid) = match defect {
            Some(d) => {
                let (img, rec) = insert_defect(&phantom.image, &phantom.lv, d)?;
                (img, Some(rec.centroid))
            }
            None => (phantom.image.clone(), None),
        };
        let sample_rng = rng.derive_path(&[1, k as u64]);
        let normal_rng = sample_rng.derive(0);
        let low_rngs: Vec<RngStream> = (0..cfg.study.dose_levels.len()).map(|d| sample_rng.derive(1 + d as u64)).collect();
        log::debug!("study {} sample {k}: normal stream {:?}, thinning streams {:?}", plan.id, normal_rng, low_rngs);
        let (normal, low) = sim.acquire(&truth, &phantom.lv, normal_rng, &low_rngs)?;

        let defect_type = defect.as_ref().map_or_else(|| "none".to_string(), DefectSpec::type_id);
        let stem = format!("{dir}/s{k:02}_{defect_type}");
        let normal_path = format!("{stem}_normal.raw");
        write_image(&out.join(&normal_path), &normal)?;
        let mut low_files = Vec::new();
        for ((&p, img), &r) in cfg.study.dose_levels.iter().zip(&low).zip(&low_rngs) {
            let path = format!("{stem}_p{}.raw", tag(p));
            write_image(&out.join(&path), img)?;
            low_files.push(LowDoseFile { dose_level: p, path, rng: r });
        }
        samples.push(SampleRecord {
            sample_id: 0,
            study_id: plan.id,
            split: plan.split,
            fold: plan.fold,
            defect: defect.clone(),
            defect_type,
            centroid,
            normal_path,
            normal_rng,
            low: low_files,
        });
    }
    Ok((study, samples))
}

/// Loaded normal-dose and low-dose volumes of one sample.
pub struct LoadedSample {
    pub normal: Image3D,
    pub low: Image3D,
}

pub fn load_sample(dir: &Path, s: &SampleRecord, dose: f64) -> Result<LoadedSample> {
    let read = |rel: &str| -> Result<Image3D> {
        let p: PathBuf = dir.join(rel);
        read_image(&p).map_err(|e| HarnessError::Data(format!("{}: {e}", p.display())))
    };
    Ok(LoadedSample { normal: read(&s.normal_path)?, low: read(s.low_path(dose)?)? })
}
