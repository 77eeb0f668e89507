//! Rotationally symmetric square frequency channels.
//!
//! Channel `c` passes the radial band `edges[c] < rho <= edges[c + 1]`
//! (cycles/voxel, `rho` from signed integer DFT frequencies divided by the
//! grid size) and nothing else. Its spatial template is the real inverse DFT
//! of that indicator, centred on voxel `(grid / 2, grid / 2)` and scaled to
//! unit L2 norm. Because the bands are disjoint, the templates are mutually
//! orthogonal.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{acyclic_shift, Image2D, Image3D};

/// Octave-spaced default band edges in cycles/voxel.
pub const DEFAULT_BAND_EDGES: [f64; 5] = [1.0 / 64.0, 1.0 / 32.0, 1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0];

/// Side length of the observer region of interest.
pub const ROI_SIZE: usize = 32;

/// Fraction of a template's energy that may be cut off by a shift before
/// the shift is flagged.
pub const TRUNCATION_WARN_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    grid: usize,
    band_edges: Vec<f64>,
    templates: Vec<Image2D>,
    band_samples: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSetInfo {
    pub grid: usize,
    pub band_edges: Vec<f64>,
    pub band_samples: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelVector(pub Vec<f64>);

impl ChannelVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn signed(k: usize, n: usize) -> i64 {
    if k <= n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// Frequencies in `(lo, hi]`, as signed integer pairs.
fn band_frequencies(grid: usize, lo: f64, hi: f64) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    for ky in 0..grid {
        for kx in 0..grid {
            let (fx, fy) = (signed(kx, grid), signed(ky, grid));
            let rho = (fx as f64).hypot(fy as f64) / grid as f64;
            if rho > lo && rho <= hi {
                out.push((fx, fy));
            }
        }
    }
    out
}

/// Unnormalised centred template: (1 / N2D) * sum over the band of
/// cos(2 pi (kx dx + ky dy) / grid), with (dx, dy) measured from the midpoint.
fn band_template(grid: usize, freqs: &[(i64, i64)]) -> Image2D {
    let n = grid as i64;
    let cos_table: Vec<f64> = (0..grid).map(|i| (2.0 * PI * i as f64 / grid as f64).cos()).collect();
    let mid = (grid / 2) as i64;
    let scale = 1.0 / (grid * grid) as f64;
    Image2D::from_fn(grid, grid, |x, y| {
        let (dx, dy) = (x as i64 - mid, y as i64 - mid);
        freqs.iter().map(|&(kx, ky)| cos_table[(kx * dx + ky * dy).rem_euclid(n) as usize]).sum::<f64>() * scale
    })
}

/// Builds one channel per consecutive pair of `band_edges`.
pub fn build_channels(grid: usize, band_edges: &[f64]) -> Result<ChannelSet> {
    if grid == 0 {
        return Err(Error::validation("channel grid must be positive"));
    }
    if band_edges.len() < 2 {
        return Err(Error::validation("need at least two band edges"));
    }
    if band_edges.windows(2).any(|w| !(w[0] < w[1])) || band_edges[0] < 0.0 {
        return Err(Error::validation("band edges must be nonnegative and strictly increasing"));
    }
    if *band_edges.last().unwrap() > 0.5 {
        return Err(Error::validation("band edges may not exceed 0.5 cycles/voxel"));
    }
    let mut templates = Vec::with_capacity(band_edges.len() - 1);
    let mut band_samples = Vec::with_capacity(band_edges.len() - 1);
    for w in band_edges.windows(2) {
        let freqs = band_frequencies(grid, w[0], w[1]);
        if freqs.is_empty() {
            return Err(Error::validation(format!(
                "band ({}, {}] holds no frequency samples on a {grid}-voxel grid",
                w[0], w[1]
            )));
        }
        let t = band_template(grid, &freqs);
        let norm = t.norm2();
        templates.push(t.map(|v| v / norm));
        band_samples.push(freqs.len());
    }
    Ok(ChannelSet { grid, band_edges: band_edges.to_vec(), templates, band_samples })
}

impl ChannelSet {
    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn n_channels(&self) -> usize {
        self.templates.len()
    }

    pub fn band_edges(&self) -> &[f64] {
        &self.band_edges
    }

    pub fn templates(&self) -> &[Image2D] {
        &self.templates
    }

    pub fn info(&self) -> ChannelSetInfo {
        ChannelSetInfo { grid: self.grid, band_edges: self.band_edges.clone(), band_samples: self.band_samples.clone() }
    }

    /// Stacks the templates as a `grid x grid x C` volume for export.
    pub fn to_volume(&self) -> Image3D {
        Image3D::from_slices(&self.templates).expect("templates share one shape")
    }

    pub fn gram(&self) -> Vec<Vec<f64>> {
        self.templates.iter().map(|a| self.templates.iter().map(|b| a.dot(b)).collect()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct ShiftedChannels {
    pub channels: ChannelSet,
    /// Per channel: more than [`TRUNCATION_WARN_FRACTION`] of the energy was
    /// cut off at the border.
    pub truncated: Vec<bool>,
}

/// Moves every template so that its centre lands on `centroid`.
pub fn shift_channels(ch: &ChannelSet, centroid: [usize; 2]) -> ShiftedChannels {
    let mid = (ch.grid / 2) as i64;
    let (dx, dy) = (centroid[0] as i64 - mid, centroid[1] as i64 - mid);
    let mut truncated = Vec::with_capacity(ch.n_channels());
    let templates = ch
        .templates
        .iter()
        .map(|t| {
            let s = acyclic_shift(t, dx, dy).image;
            // templates have unit norm, so the remaining energy is a fraction
            let kept = s.dot(&s);
            truncated.push(1.0 - kept > TRUNCATION_WARN_FRACTION);
            s
        })
        .collect();
    if truncated.iter().any(|&t| t) {
        log::debug!("channel shift to {centroid:?} truncates more than a quarter of some template's energy");
    }
    ShiftedChannels { channels: ChannelSet { templates, ..ch.clone() }, truncated }
}

/// `U f`: one inner product per channel.
pub fn channelize(ch: &ChannelSet, img: &Image2D) -> Result<ChannelVector> {
    if img.width() != ch.grid || img.height() != ch.grid {
        return Err(Error::validation(format!(
            "image is {}x{}, channels are built on a {} grid",
            img.width(),
            img.height(),
            ch.grid
        )));
    }
    Ok(ChannelVector(ch.templates.iter().map(|t| t.dot(img)).collect()))
}

/// Three `ROI_SIZE` x `ROI_SIZE` windows centred on the defect centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiStack {
    pub slices: [Image2D; 3],
    /// The centroid slice was moved to keep both neighbours inside the volume.
    pub clamped: bool,
}

/// Extracts slices `s - 1 ..= s + 1` around `centroid = [x, y, s]`, each a
/// window whose voxel `(16, 16)` is the centroid; zero outside the image.
pub fn extract_roi(img: &Image3D, centroid: [usize; 3]) -> RoiStack {
    let [cx, cy, cs] = centroid;
    let n = img.n_slices();
    let centre = if n >= 3 { cs.clamp(1, n - 2) } else { cs.min(n - 1) };
    let clamped = centre != cs;
    let half = (ROI_SIZE / 2) as i64;
    let window = |s: i64| -> Image2D {
        if s < 0 || s >= n as i64 {
            return Image2D::zeros(ROI_SIZE, ROI_SIZE);
        }
        let s = s as usize;
        Image2D::from_fn(ROI_SIZE, ROI_SIZE, |i, j| {
            let x = cx as i64 - half + i as i64;
            let y = cy as i64 - half + j as i64;
            if x >= 0 && y >= 0 && (x as usize) < img.width() && (y as usize) < img.height() {
                img.get(x as usize, y as usize, s)
            } else {
                0.0
            }
        })
    };
    let c = centre as i64;
    RoiStack { slices: [window(c - 1), window(c), window(c + 1)], clamped }
}

/// Concatenated channel outputs of the three ROI slices (length `3 C`).
pub fn roi_features(ch: &ChannelSet, roi: &RoiStack) -> Result<ChannelVector> {
    let mut out = Vec::with_capacity(3 * ch.n_channels());
    for s in &roi.slices {
        out.extend(channelize(ch, s)?.0);
    }
    Ok(ChannelVector(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use rand::Rng;

    fn random_image(n: usize, seed: u64) -> Image2D {
        let mut g = RngStream::new(seed, 77).generator();
        Image2D::from_fn(n, n, |_, _| g.random_range(-1.0..1.0))
    }

    fn assert_diagonal(gram: &[Vec<f64>], tol: f64) {
        for (i, row) in gram.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if i != j {
                    assert!(v.abs() <= tol, "gram[{i}][{j}] = {v}");
                }
            }
        }
    }

    #[test]
    fn default_bands_on_roi_grid() {
        let ch = build_channels(32, &DEFAULT_BAND_EDGES).unwrap();
        assert_eq!(ch.n_channels(), 4);
        assert_diagonal(&ch.gram(), 1e-10);
        for t in ch.templates() {
            assert!((t.norm2() - 1.0).abs() <= 1e-12);
        }
        let flat = Image2D::filled(32, 32, 5.0);
        for v in channelize(&ch, &flat).unwrap().0 {
            assert!(v.abs() <= 1e-10);
        }
    }

    #[test]
    fn parseval_matches_band_counts() {
        for grid in [16, 32, 64] {
            for w in DEFAULT_BAND_EDGES.windows(2) {
                let freqs = band_frequencies(grid, w[0], w[1]);
                // brute-force count of in-band lattice frequencies
                let mut count = 0;
                for a in -(grid as i64) / 2 + 1..=(grid as i64) / 2 {
                    for b in -(grid as i64) / 2 + 1..=(grid as i64) / 2 {
                        let r2 = (a * a + b * b) as f64;
                        let (lo, hi) = (w[0] * grid as f64, w[1] * grid as f64);
                        if r2.sqrt() > lo && r2.sqrt() <= hi {
                            count += 1;
                        }
                    }
                }
                assert_eq!(freqs.len(), count);
                if count == 0 {
                    continue;
                }
                let t = band_template(grid, &freqs);
                let expect = count as f64 / (grid * grid) as f64;
                assert!((t.dot(&t) - expect).abs() <= 1e-12, "grid {grid}");
            }
        }
    }

    #[test]
    fn templates_are_point_symmetric_about_midpoint() {
        let ch = build_channels(32, &DEFAULT_BAND_EDGES).unwrap();
        for t in ch.templates() {
            for y in 1..32 {
                for x in 1..32 {
                    let (mx, my) = (32 - x, 32 - y);
                    assert!((t.get(x, y) - t.get(mx, my)).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn empty_band_is_rejected() {
        assert!(build_channels(8, &[0.01, 0.05]).is_err());
        assert!(build_channels(32, &[0.1, 0.1]).is_err());
        assert!(build_channels(32, &[0.1, 0.6]).is_err());
    }

    #[test]
    fn tiny_grid_matches_explicit_matrix_product() {
        // 4x4 grid, band (0.2, 0.5]: frequencies with rho in {0.25, 0.354, 0.5}
        let ch = build_channels(4, &[0.2, 0.5]).unwrap();
        let mut row = [0.0f64; 16];
        let mid = 2i64;
        for y in 0..4i64 {
            for x in 0..4i64 {
                let mut acc = 0.0;
                for ky in -1..=2i64 {
                    for kx in -1..=2i64 {
                        let rho = ((kx * kx + ky * ky) as f64).sqrt() / 4.0;
                        if rho > 0.2 && rho <= 0.5 {
                            acc += (2.0 * PI * (kx * (x - mid) + ky * (y - mid)) as f64 / 4.0).cos();
                        }
                    }
                }
                row[(y * 4 + x) as usize] = acc;
            }
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let img = random_image(4, 3);
        let expect: f64 = row.iter().zip(img.as_slice()).map(|(r, v)| r / norm * v).sum();
        let got = channelize(&ch, &img).unwrap().0[0];
        assert!((got - expect).abs() <= 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn channelize_is_linear_and_checks_dims() {
        let ch = build_channels(32, &DEFAULT_BAND_EDGES).unwrap();
        let (f, g) = (random_image(32, 1), random_image(32, 2));
        let combo = Image2D::from_vec(32, 32, f.as_slice().iter().zip(g.as_slice()).map(|(a, b)| 1.5 * a - 2.0 * b).collect()).unwrap();
        let (cf, cg, cc) = (channelize(&ch, &f).unwrap(), channelize(&ch, &g).unwrap(), channelize(&ch, &combo).unwrap());
        for i in 0..4 {
            assert!((cc.0[i] - (1.5 * cf.0[i] - 2.0 * cg.0[i])).abs() <= 1e-10);
        }
        assert!(channelize(&ch, &Image2D::zeros(32, 32)).unwrap().0.iter().all(|&v| v == 0.0));
        assert!(channelize(&ch, &Image2D::zeros(16, 16)).is_err());
    }

    #[test]
    fn shift_to_midpoint_is_identity() {
        let ch = build_channels(64, &DEFAULT_BAND_EDGES).unwrap();
        let s = shift_channels(&ch, [32, 32]);
        assert_eq!(s.channels, ch);
        assert!(s.truncated.iter().all(|&t| !t));
    }

    /// Channel rows windowed to a disc and re-orthonormalised, so their
    /// support is compact and known.
    fn compact_channels(grid: usize, radius: f64) -> ChannelSet {
        let ch = build_channels(grid, &DEFAULT_BAND_EDGES).unwrap();
        let mid = (grid / 2) as f64;
        let mut rows: Vec<Image2D> = Vec::new();
        for t in ch.templates() {
            let mut r = Image2D::from_fn(grid, grid, |x, y| {
                if (x as f64 - mid).hypot(y as f64 - mid) <= radius { t.get(x, y) } else { 0.0 }
            });
            for q in &rows {
                let d = r.dot(q);
                r = Image2D::from_vec(grid, grid, r.as_slice().iter().zip(q.as_slice()).map(|(a, b)| a - d * b).collect()).unwrap();
            }
            let n = r.norm2();
            rows.push(r.map(|v| v / n));
        }
        ChannelSet { templates: rows, ..ch }
    }

    #[test]
    fn shifted_channels_equal_counter_shifted_image() {
        let ch = compact_channels(64, 12.0);
        for (seed, centroid) in [(1u64, [40usize, 25usize]), (2, [20, 44]), (3, [32, 45])] {
            let sh = shift_channels(&ch, centroid);
            assert!(sh.truncated.iter().all(|&t| !t));
            let f = random_image(64, seed);
            let back = acyclic_shift(&f, 32 - centroid[0] as i64, 32 - centroid[1] as i64).image;
            let a = channelize(&sh.channels, &f).unwrap();
            let b = channelize(&ch, &back).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn interior_shift_keeps_gram_diagonal_when_support_fits() {
        let ch = compact_channels(64, 12.0);
        assert_diagonal(&ch.gram(), 1e-10);
        let sh = shift_channels(&ch, [42, 23]);
        assert_diagonal(&sh.channels.gram(), 1e-10);
    }

    #[test]
    fn corner_shift_is_flagged() {
        let ch = build_channels(64, &DEFAULT_BAND_EDGES).unwrap();
        let sh = shift_channels(&ch, [1, 1]);
        assert!(sh.truncated.iter().any(|&t| t));
    }

    #[test]
    fn roi_centring_and_padding() {
        let mut img = Image3D::zeros(64, 64, 8);
        img.set(32, 32, 4, 9.0);
        let roi = extract_roi(&img, [32, 32, 4]);
        assert_eq!(roi.slices[1].get(16, 16), 9.0);
        assert!(!roi.clamped);

        let ones = Image3D::filled(64, 64, 8, 1.0);
        let roi = extract_roi(&ones, [4, 30, 3]);
        for y in 0..32 {
            for x in 0..32 {
                assert_eq!(roi.slices[0].get(x, y), if x < 12 { 0.0 } else { 1.0 });
            }
        }
        let roi = extract_roi(&ones, [30, 30, 3]);
        assert!(roi.slices.iter().all(|s| s.as_slice().iter().all(|&v| v == 1.0)));
        let roi = extract_roi(&ones, [30, 30, 0]);
        assert!(roi.clamped);
    }

    #[test]
    fn roi_features_have_three_blocks() {
        let ch = build_channels(32, &DEFAULT_BAND_EDGES).unwrap();
        let mut img = Image3D::zeros(64, 64, 8);
        for s in 0..8 {
            img.set_slice(s, &random_image(64, s as u64).map(|v| v * s as f64));
        }
        let roi = extract_roi(&img, [30, 34, 4]);
        let v = roi_features(&ch, &roi).unwrap();
        assert_eq!(v.len(), 12);
        assert_eq!(&v.0[4..8], channelize(&ch, &roi.slices[1]).unwrap().as_slice());
    }
}
