//! Short-axis left-ventricle phantoms and perfusion defects.
//!
//! Angles are measured counter-clockwise from the +x axis with y pointing
//! up the displayed image, i.e. `atan2(cy - y, x - cx)`. The anterior wall
//! (90°) is therefore at the top of a displayed slice and the inferior wall
//! (270°) at the bottom.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image3D;
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Jitter {
    /// Common relative perturbation of both radii (uniform, ±).
    pub radius_frac: f64,
    /// Per-axis centre offset in voxels (uniform, ±).
    pub center_vox: f64,
    /// Relative perturbation of the wall uptake (uniform, ±).
    pub uptake_frac: f64,
}

impl Default for Jitter {
    fn default() -> Self {
        Self { radius_frac: 0.10, center_vox: 2.0, uptake_frac: 0.15 }
    }
}

impl Jitter {
    pub fn none() -> Self {
        Self { radius_frac: 0.0, center_vox: 0.0, uptake_frac: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub grid: usize,
    pub n_slices: usize,
    pub lv_center: [f64; 2],
    pub inner_radius: f64,
    pub outer_radius: f64,
    pub wall_uptake: f64,
    pub cavity_uptake: f64,
    pub background_uptake: f64,
    /// Inclusive slice range holding the myocardial wall.
    pub wall_slice_range: [usize; 2],
    pub jitter: Jitter,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            grid: 64,
            n_slices: 8,
            lv_center: [32.0, 32.0],
            inner_radius: 8.0,
            outer_radius: 12.0,
            wall_uptake: 100.0,
            cavity_uptake: 20.0,
            background_uptake: 10.0,
            wall_slice_range: [1, 5],
            jitter: Jitter::default(),
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let half = self.grid as f64 / 2.0;
        let j = &self.jitter;
        if self.grid == 0 || self.n_slices == 0 {
            return Err(Error::validation("phantom grid and slice count must be positive"));
        }
        if !(0.0 < self.inner_radius && self.inner_radius < self.outer_radius && self.outer_radius < half) {
            return Err(Error::validation(format!(
                "radii must satisfy 0 < inner ({}) < outer ({}) < grid/2 ({half})",
                self.inner_radius, self.outer_radius
            )));
        }
        if !(self.wall_uptake > self.background_uptake && self.background_uptake >= 0.0) {
            return Err(Error::validation("need wall_uptake > background_uptake >= 0"));
        }
        if self.cavity_uptake >= self.wall_uptake || self.cavity_uptake < 0.0 {
            return Err(Error::validation("need 0 <= cavity_uptake < wall_uptake"));
        }
        let [a, b] = self.wall_slice_range;
        if a > b || b >= self.n_slices {
            return Err(Error::validation(format!("wall slice range [{a}, {b}] invalid for {} slices", self.n_slices)));
        }
        if j.radius_frac < 0.0 || j.radius_frac >= 1.0 || j.center_vox < 0.0 || j.uptake_frac < 0.0 || j.uptake_frac >= 1.0
        {
            return Err(Error::validation("jitter amplitudes out of range"));
        }
        let reach = self.outer_radius * (1.0 + j.radius_frac) + j.center_vox;
        let fits = |c: f64| c - reach >= 0.0 && c + reach <= self.grid as f64;
        if self.outer_radius * (1.0 + j.radius_frac) >= half
            || !fits(self.lv_center[0])
            || !fits(self.lv_center[1])
            || self.wall_uptake * (1.0 - j.uptake_frac) <= self.background_uptake
            || self.wall_uptake * (1.0 - j.uptake_frac) <= self.cavity_uptake
        {
            return Err(Error::validation("jitter can push the phantom outside its invariants"));
        }
        Ok(())
    }
}

/// The realised (jittered) geometry of one study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomGeometry {
    pub grid: usize,
    pub n_slices: usize,
    pub center: [f64; 2],
    pub inner_radius: f64,
    pub outer_radius: f64,
    pub wall_uptake: f64,
    pub cavity_uptake: f64,
    pub background_uptake: f64,
    pub wall_slice_range: [usize; 2],
}

impl PhantomGeometry {
    pub fn is_wall_slice(&self, s: usize) -> bool {
        (self.wall_slice_range[0]..=self.wall_slice_range[1]).contains(&s)
    }

    fn radius(&self, x: usize, y: usize) -> f64 {
        (x as f64 - self.center[0]).hypot(y as f64 - self.center[1])
    }

    pub fn render(&self) -> (Image3D, LvMask) {
        let g = self.grid;
        let mut img = Image3D::filled(g, g, self.n_slices, self.background_uptake);
        let mut mask = VoxelMask::empty(g, g, self.n_slices);
        for s in (0..self.n_slices).filter(|&s| self.is_wall_slice(s)) {
            for y in 0..g {
                for x in 0..g {
                    let r = self.radius(x, y);
                    if r < self.inner_radius {
                        img.set(x, y, s, self.cavity_uptake);
                    } else if r < self.outer_radius {
                        img.set(x, y, s, self.wall_uptake);
                        mask.insert(x, y, s);
                    }
                }
            }
        }
        (img, LvMask { mask, center: self.center, wall_slice_range: self.wall_slice_range })
    }
}

/// Dense boolean voxel set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoxelMask {
    width: usize,
    height: usize,
    n_slices: usize,
    bits: Vec<bool>,
}

impl VoxelMask {
    pub fn empty(width: usize, height: usize, n_slices: usize) -> Self {
        Self { width, height, n_slices, bits: vec![false; width * height * n_slices] }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.n_slices)
    }

    #[inline]
    fn idx(&self, x: usize, y: usize, s: usize) -> usize {
        (s * self.height + y) * self.width + x
    }

    pub fn insert(&mut self, x: usize, y: usize, s: usize) {
        let i = self.idx(x, y, s);
        self.bits[i] = true;
    }

    #[inline]
    pub fn contains(&self, x: usize, y: usize, s: usize) -> bool {
        self.bits[self.idx(x, y, s)]
    }

    pub fn contains_index(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let (w, h) = (self.width, self.height);
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(move |(i, _)| (i % w, (i / w) % h, i / (w * h)))
    }

    pub fn slice_count(&self, s: usize) -> usize {
        let n = self.width * self.height;
        self.bits[s * n..(s + 1) * n].iter().filter(|&&b| b).count()
    }

    /// Mean voxel coordinate, rounded to the nearest voxel.
    pub fn centroid(&self) -> Option<[usize; 3]> {
        let n = self.count();
        if n == 0 {
            return None;
        }
        let mut acc = [0.0f64; 3];
        for (x, y, s) in self.iter() {
            acc[0] += x as f64;
            acc[1] += y as f64;
            acc[2] += s as f64;
        }
        Some(acc.map(|a| (a / n as f64).round() as usize))
    }
}

/// Myocardial wall voxels together with the geometry needed to place defects.
#[derive(Debug, Clone, PartialEq)]
pub struct LvMask {
    pub mask: VoxelMask,
    pub center: [f64; 2],
    pub wall_slice_range: [usize; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wall {
    Anterior,
    Inferior,
}

impl Wall {
    pub const ALL: [Wall; 2] = [Wall::Anterior, Wall::Inferior];

    pub fn bisector_deg(self) -> f64 {
        match self {
            Wall::Anterior => 90.0,
            Wall::Inferior => 270.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Wall::Anterior => "anterior",
            Wall::Inferior => "inferior",
        }
    }
}

impl fmt::Display for Wall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectSpec {
    pub wall: Wall,
    pub extent_deg: f64,
    pub severity: f64,
    #[serde(default = "default_axial_span")]
    pub axial_span: usize,
}

fn default_axial_span() -> usize {
    3
}

pub const TRAIN_EXTENTS: [f64; 2] = [30.0, 60.0];
pub const TEST_EXTENTS: [f64; 3] = [30.0, 45.0, 60.0];
pub const SEVERITIES: [f64; 3] = [0.10, 0.175, 0.25];

impl DefectSpec {
    pub fn new(wall: Wall, extent_deg: f64, severity: f64) -> Self {
        Self { wall, extent_deg, severity, axial_span: default_axial_span() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.extent_deg > 0.0 && self.extent_deg < 360.0) {
            return Err(Error::validation(format!("defect extent {} outside (0, 360)", self.extent_deg)));
        }
        if !(0.0..1.0).contains(&self.severity) {
            return Err(Error::validation(format!("defect severity {} outside [0, 1)", self.severity)));
        }
        if self.axial_span == 0 {
            return Err(Error::validation("defect axial span must be at least one slice"));
        }
        Ok(())
    }

    /// Compact identifier such as `anterior_e30_s17.5`.
    pub fn type_id(&self) -> String {
        format!("{}_e{}_s{}", self.wall, self.extent_deg, self.severity * 100.0)
    }

    fn in_sector(&self, angle_deg: f64) -> bool {
        let d = (angle_deg - self.wall.bisector_deg()).rem_euclid(360.0);
        let d = if d > 180.0 { 360.0 - d } else { d };
        d <= self.extent_deg / 2.0
    }
}

/// The 12 training defect types: 2 walls x 2 extents x 3 severities.
pub fn training_defect_types() -> Vec<DefectSpec> {
    defect_grid(&TRAIN_EXTENTS)
}

/// The 18 test defect types, which add the unseen 45° extent.
pub fn test_defect_types() -> Vec<DefectSpec> {
    defect_grid(&TEST_EXTENTS)
}

fn defect_grid(extents: &[f64]) -> Vec<DefectSpec> {
    let mut out = Vec::new();
    for wall in Wall::ALL {
        for &e in extents {
            for &s in &SEVERITIES {
                out.push(DefectSpec::new(wall, e, s));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DefectRecord {
    pub spec: DefectSpec,
    pub centroid: [usize; 3],
    pub mask: VoxelMask,
}

pub struct Phantom {
    pub image: Image3D,
    pub lv: LvMask,
    pub geometry: PhantomGeometry,
}

/// Draws the per-study jitter and renders the phantom.
pub fn generate_phantom(spec: &PhantomSpec, rng: RngStream) -> Result<Phantom> {
    spec.validate()?;
    let mut g = rng.generator();
    let j = &spec.jitter;
    let mut sym = |a: f64| if a > 0.0 { g.random_range(-a..=a) } else { 0.0 };
    let radius_scale = 1.0 + sym(j.radius_frac);
    let dx = sym(j.center_vox);
    let dy = sym(j.center_vox);
    let uptake_scale = 1.0 + sym(j.uptake_frac);
    let geometry = PhantomGeometry {
        grid: spec.grid,
        n_slices: spec.n_slices,
        center: [spec.lv_center[0] + dx, spec.lv_center[1] + dy],
        inner_radius: spec.inner_radius * radius_scale,
        outer_radius: spec.outer_radius * radius_scale,
        wall_uptake: spec.wall_uptake * uptake_scale,
        cavity_uptake: spec.cavity_uptake,
        background_uptake: spec.background_uptake,
        wall_slice_range: spec.wall_slice_range,
    };
    let (image, lv) = geometry.render();
    Ok(Phantom { image, lv, geometry })
}

/// Slices covered by a defect: the central `span` slices of the wall range.
pub fn defect_slices(wall_slice_range: [usize; 2], span: usize) -> std::ops::RangeInclusive<usize> {
    let [a, b] = wall_slice_range;
    let n = b - a + 1;
    let span = span.min(n);
    let mid = a + (n - 1) / 2;
    let first = (mid + span / 2).saturating_sub(span - 1).max(a);
    let first = first.min(b + 1 - span);
    first..=first + span - 1
}

/// Wall voxels affected by `defect`, without modifying any image.
pub fn defect_mask(lv: &LvMask, defect: &DefectSpec) -> Result<DefectRecord> {
    defect.validate()?;
    let (w, h, n) = lv.mask.dims();
    let mut mask = VoxelMask::empty(w, h, n);
    for s in defect_slices(lv.wall_slice_range, defect.axial_span) {
        if lv.mask.slice_count(s) == 0 {
            return Err(Error::DefectPlacement(format!("no wall voxels on slice {s}")));
        }
        for y in 0..h {
            for x in 0..w {
                if !lv.mask.contains(x, y, s) {
                    continue;
                }
                let angle = (lv.center[1] - y as f64).atan2(x as f64 - lv.center[0]).to_degrees();
                if defect.in_sector(angle) {
                    mask.insert(x, y, s);
                }
            }
        }
    }
    let centroid = mask
        .centroid()
        .ok_or_else(|| Error::DefectPlacement(format!("defect {} covers no wall voxels", defect.type_id())))?;
    Ok(DefectRecord { spec: defect.clone(), centroid, mask })
}

/// Multiplies the uptake of every voxel in the defect sector by
/// `1 - severity`.
pub fn insert_defect(img: &Image3D, lv: &LvMask, defect: &DefectSpec) -> Result<(Image3D, DefectRecord)> {
    if img.dims() != lv.mask.dims() {
        return Err(Error::validation("image and LV mask dimensions differ"));
    }
    let record = defect_mask(lv, defect)?;
    let factor = 1.0 - defect.severity;
    let mut out = img.clone();
    for (x, y, s) in record.mask.iter() {
        out.set(x, y, s, img.get(x, y, s) * factor);
    }
    Ok((out, record))
}

/// Clamps voxels outside the LV wall to the maximum uptake inside it.
pub fn remap_uptake(img: &Image3D, lv_mask: &VoxelMask) -> Result<Image3D> {
    if img.dims() != lv_mask.dims() {
        return Err(Error::validation("image and LV mask dimensions differ"));
    }
    let max = img
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(i, _)| lv_mask.contains_index(*i))
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::validation("LV mask is empty"));
    }
    let mut out = img.clone();
    for (i, v) in out.as_mut_slice().iter_mut().enumerate() {
        if !lv_mask.contains_index(i) && *v > max {
            *v = max;
        }
    }
    Ok(out)
}
