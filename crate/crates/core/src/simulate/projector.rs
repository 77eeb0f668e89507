use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image2D, Sinogram, SinogramKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Geometry {
    /// Views evenly spaced over 180°.
    pub n_angles: usize,
    pub n_bins: usize,
    /// Detector bin width in voxels.
    pub bin_width: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Self { n_angles: 60, n_bins: 64, bin_width: 1.0 }
    }
}

impl Geometry {
    pub fn validate(&self) -> Result<()> {
        if self.n_angles == 0 || self.n_bins == 0 || !(self.bin_width > 0.0) {
            return Err(Error::validation("geometry needs n_angles >= 1, n_bins >= 1, bin_width > 0"));
        }
        Ok(())
    }

    pub fn angle(&self, a: usize) -> f64 {
        PI * a as f64 / self.n_angles as f64
    }
}

/// Pixel-driven parallel-beam projector with linear interpolation between
/// the two nearest detector bins.
///
/// The rotation centre is voxel `(width / 2, height / 2)`, which projects
/// onto the centre of bin `n_bins / 2` at every angle. Interpolation weights
/// are tabulated once so that forward and back projection use literally the
/// same coefficients and form an exact adjoint pair.
#[derive(Debug, Clone)]
pub struct Projector {
    geom: Geometry,
    width: usize,
    height: usize,
    // per (angle, pixel): slot of the lower bin in a row padded by one bin on
    // each side, and the weights of the lower and upper bins (zero when the
    // bin lies outside the detector)
    slot: Vec<u32>,
    weights: Vec<[f64; 2]>,
}

impl Projector {
    pub fn new(geom: &Geometry, width: usize, height: usize) -> Result<Self> {
        geom.validate()?;
        let n_pix = width * height;
        let mut slot = Vec::with_capacity(geom.n_angles * n_pix);
        let mut weights = Vec::with_capacity(geom.n_angles * n_pix);
        let nb = geom.n_bins as i64;
        let (cx, cy) = ((width / 2) as f64, (height / 2) as f64);
        let centre_bin = (geom.n_bins / 2) as f64;
        for a in 0..geom.n_angles {
            let (s, c) = geom.angle(a).sin_cos();
            for y in 0..height {
                for x in 0..width {
                    let t = (x as f64 - cx) * c + (y as f64 - cy) * s;
                    let u = t / geom.bin_width + centre_bin;
                    let j = u.floor();
                    let f = u - j;
                    let j = j as i64;
                    let inside = |b: i64| (0..nb).contains(&b);
                    slot.push((j + 1).clamp(0, nb) as u32);
                    weights.push([if inside(j) { 1.0 - f } else { 0.0 }, if inside(j + 1) { f } else { 0.0 }]);
                }
            }
        }
        Ok(Self { geom: geom.clone(), width, height, slot, weights })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn image_dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    fn check_image(&self, img: &Image2D) -> Result<()> {
        if img.width() != self.width || img.height() != self.height {
            return Err(Error::validation(format!(
                "image is {}x{}, projector expects {}x{}",
                img.width(),
                img.height(),
                self.width,
                self.height
            )));
        }
        Ok(())
    }

    fn check_sino(&self, sino: &Sinogram) -> Result<()> {
        if sino.n_angles() != self.geom.n_angles || sino.n_bins() != self.geom.n_bins {
            return Err(Error::validation(format!(
                "sinogram is {}x{}, geometry expects {}x{}",
                sino.n_angles(),
                sino.n_bins(),
                self.geom.n_angles,
                self.geom.n_bins
            )));
        }
        Ok(())
    }

    /// Projects the listed angles only; rows for other angles are zero.
    pub(crate) fn forward_angles(&self, img: &[f64], angles: impl Iterator<Item = usize>, out: &mut [f64]) {
        let n_pix = self.width * self.height;
        let nb = self.geom.n_bins;
        let mut padded = vec![0.0; nb + 2];
        for a in angles {
            padded.fill(0.0);
            let slot = &self.slot[a * n_pix..(a + 1) * n_pix];
            let weights = &self.weights[a * n_pix..(a + 1) * n_pix];
            for p in 0..n_pix {
                let v = img[p];
                if v == 0.0 {
                    continue;
                }
                let k = slot[p] as usize;
                let [w0, w1] = weights[p];
                padded[k] += w0 * v;
                padded[k + 1] += w1 * v;
            }
            out[a * nb..(a + 1) * nb].copy_from_slice(&padded[1..=nb]);
        }
    }

    /// Back-projects the listed angles, accumulating into `out`.
    pub(crate) fn back_angles(&self, sino: &[f64], angles: impl Iterator<Item = usize>, out: &mut [f64]) {
        let n_pix = self.width * self.height;
        let nb = self.geom.n_bins;
        let mut padded = vec![0.0; nb + 2];
        for a in angles {
            padded[1..=nb].copy_from_slice(&sino[a * nb..(a + 1) * nb]);
            let slot = &self.slot[a * n_pix..(a + 1) * n_pix];
            let weights = &self.weights[a * n_pix..(a + 1) * n_pix];
            for p in 0..n_pix {
                let k = slot[p] as usize;
                let [w0, w1] = weights[p];
                out[p] += w0 * padded[k] + w1 * padded[k + 1];
            }
        }
    }

    pub fn forward(&self, img: &Image2D) -> Result<Sinogram> {
        self.check_image(img)?;
        if let Some(i) = img.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!("non-finite voxel at index {i}")));
        }
        let mut out = vec![0.0; self.geom.n_angles * self.geom.n_bins];
        self.forward_angles(img.as_slice(), 0..self.geom.n_angles, &mut out);
        // signed images give signed projections; only the data container's
        // nonnegativity check is skipped here
        Ok(Sinogram::from_vec_unchecked(self.geom.n_angles, self.geom.n_bins, SinogramKind::Expected, out))
    }

    pub fn back(&self, sino: &Sinogram) -> Result<Image2D> {
        self.check_sino(sino)?;
        let mut out = vec![0.0; self.width * self.height];
        self.back_angles(sino.as_slice(), 0..self.geom.n_angles, &mut out);
        Image2D::from_vec(self.width, self.height, out)
    }
}

pub fn forward_project(img: &Image2D, geom: &Geometry) -> Result<Sinogram> {
    Projector::new(geom, img.width(), img.height())?.forward(img)
}

/// Adjoint of [`forward_project`] onto a `width` x `height` grid.
pub fn back_project(sino: &Sinogram, geom: &Geometry, width: usize, height: usize) -> Result<Image2D> {
    Projector::new(geom, width, height)?.back(sino)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use rand::Rng;

    fn disc(n: usize, r: f64) -> Image2D {
        let c = (n / 2) as f64;
        Image2D::from_fn(n, n, |x, y| if (x as f64 - c).hypot(y as f64 - c) < r { 1.0 + (x + 2 * y) as f64 * 0.01 } else { 0.0 })
    }

    #[test]
    fn zero_in_zero_out() {
        let g = Geometry::default();
        let s = forward_project(&Image2D::zeros(64, 64), &g).unwrap();
        assert!(s.as_slice().iter().all(|&v| v == 0.0));
        let b = back_project(&Sinogram::zeros(60, 64, SinogramKind::Expected), &g, 64, 64).unwrap();
        assert!(b.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn every_view_conserves_mass() {
        let g = Geometry::default();
        let img = disc(64, 28.0);
        let total = img.sum();
        let s = forward_project(&img, &g).unwrap();
        for a in 0..g.n_angles {
            let row: f64 = s.row(a).iter().sum();
            assert!((row - total).abs() <= 1e-6 * total, "angle {a}: {row} vs {total}");
        }
    }

    #[test]
    fn centred_impulse_lands_in_centre_bin() {
        let g = Geometry::default();
        let mut img = Image2D::zeros(64, 64);
        img.set(32, 32, 1.0);
        let s = forward_project(&img, &g).unwrap();
        for a in 0..g.n_angles {
            let row = s.row(a);
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            assert!((row[32] - 1.0).abs() <= 1e-12, "angle {a}: {:?}", &row[30..35]);
        }
    }

    #[test]
    fn adjoint_identity_on_random_data() {
        let g = Geometry { n_angles: 10, n_bins: 16, bin_width: 1.0 };
        let p = Projector::new(&g, 16, 16).unwrap();
        for seed in 0..5 {
            let mut r = RngStream::new(seed, 3).generator();
            let f = Image2D::from_fn(16, 16, |_, _| r.random_range(-1.0..1.0));
            let gv: Vec<f64> = (0..160).map(|_| r.random_range(-1.0..1.0)).collect();
            let gs = Sinogram::from_vec_unchecked(10, 16, SinogramKind::Expected, gv);
            let lhs = p.forward(&f).unwrap().dot(&gs);
            let rhs = f.dot(&p.back(&gs).unwrap());
            assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(rhs.abs()), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn backprojected_ones_are_positive_inside_fov() {
        let g = Geometry::default();
        let ones = Sinogram::from_vec(60, 64, SinogramKind::Expected, vec![1.0; 60 * 64]).unwrap();
        let b = back_project(&ones, &g, 64, 64).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                if (x as f64 - 32.0).hypot(y as f64 - 32.0) < 31.0 {
                    assert!(b.get(x, y) > 0.0);
                }
            }
        }
    }

    #[test]
    fn projection_is_linear() {
        let g = Geometry { n_angles: 7, n_bins: 12, bin_width: 1.0 };
        let p = Projector::new(&g, 12, 12).unwrap();
        let mut r = RngStream::new(11, 0).generator();
        let f = Image2D::from_fn(12, 12, |_, _| r.random_range(-1.0..1.0));
        let h = Image2D::from_fn(12, 12, |_, _| r.random_range(-1.0..1.0));
        let combo = Image2D::from_vec(12, 12, f.as_slice().iter().zip(h.as_slice()).map(|(a, b)| 2.0 * a - 0.5 * b).collect()).unwrap();
        let (pf, ph, pc) = (p.forward(&f).unwrap(), p.forward(&h).unwrap(), p.forward(&combo).unwrap());
        for i in 0..pc.as_slice().len() {
            let expect = 2.0 * pf.as_slice()[i] - 0.5 * ph.as_slice()[i];
            assert!((pc.as_slice()[i] - expect).abs() <= 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let p = Projector::new(&Geometry::default(), 64, 64).unwrap();
        assert!(p.forward(&Image2D::zeros(32, 32)).is_err());
        assert!(p.back(&Sinogram::zeros(10, 64, SinogramKind::Expected)).is_err());
    }
}
