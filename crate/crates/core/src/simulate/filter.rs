use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image2D, Image3D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Butterworth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub kind: FilterKind,
    pub order: u32,
    /// Cycles per voxel.
    pub cutoff: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { kind: FilterKind::Butterworth, order: 5, cutoff: 0.25 }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff > 0.0 && self.cutoff <= 0.5) || self.order == 0 {
            return Err(Error::validation(format!(
                "filter needs 0 < cutoff <= 0.5 and order >= 1 (got {}, {})",
                self.cutoff, self.order
            )));
        }
        Ok(())
    }
}

/// Amplitude response `H(rho)` with `|H|^2 = 1 / (1 + (rho / cutoff)^(2 order))`.
pub fn butterworth_response(cfg: &FilterConfig, rho: f64) -> f64 {
    1.0 / (1.0 + (rho / cfg.cutoff).powi(2 * cfg.order as i32)).sqrt()
}

/// Signed integer frequency of DFT index `k` on an `n`-point axis.
fn signed_freq(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Multiplies the 2-D spectrum by a real, radially symmetric response and
/// returns the real part of the inverse transform.
pub fn apply_radial_filter(img: &Image2D, response: impl Fn(f64) -> f64) -> Image2D {
    let (w, h) = (img.width(), img.height());
    let mut planner = FftPlanner::<f64>::new();
    let (fw, iw) = (planner.plan_fft_forward(w), planner.plan_fft_inverse(w));
    let (fh, ih) = (planner.plan_fft_forward(h), planner.plan_fft_inverse(h));

    let mut buf: Vec<Complex64> = img.as_slice().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    for row in buf.chunks_exact_mut(w) {
        fw.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        fh.process(&mut col);
        let fx = signed_freq(x, w) / w as f64;
        for (y, c) in col.iter_mut().enumerate() {
            let fy = signed_freq(y, h) / h as f64;
            *c *= response(fx.hypot(fy));
        }
        ih.process(&mut col);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }
    for row in buf.chunks_exact_mut(w) {
        iw.process(row);
    }
    let norm = (w * h) as f64;
    Image2D::from_fn(w, h, |x, y| buf[y * w + x].re / norm)
}

pub fn post_filter(img: &Image2D, cfg: &FilterConfig) -> Result<Image2D> {
    cfg.validate()?;
    Ok(apply_radial_filter(img, |rho| butterworth_response(cfg, rho)))
}

/// Slice-wise [`post_filter`].
pub fn post_filter_volume(img: &Image3D, cfg: &FilterConfig) -> Result<Image3D> {
    let slices = img.slices().map(|s| post_filter(&s, cfg)).collect::<Result<Vec<_>>>()?;
    Image3D::from_slices(&slices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn constant_passes_unchanged() {
        let img = Image2D::filled(64, 64, 3.25);
        let out = post_filter(&img, &FilterConfig::default()).unwrap();
        assert!(out.as_slice().iter().all(|v| (v - 3.25).abs() <= 1e-9));
    }

    #[test]
    fn sinusoid_at_cutoff_loses_half_its_power() {
        // 16 cycles over 64 voxels = 0.25 cycles/voxel
        let img = Image2D::from_fn(64, 64, |x, _| (2.0 * PI * 16.0 * x as f64 / 64.0).cos());
        let out = post_filter(&img, &FilterConfig::default()).unwrap();
        let gain = out.norm2() / img.norm2();
        assert!((gain - 1.0 / 2f64.sqrt()).abs() <= 0.01 / 2f64.sqrt(), "gain {gain}");
    }

    #[test]
    fn twice_equals_squared_response() {
        let cfg = FilterConfig { order: 3, cutoff: 0.2, ..Default::default() };
        let img = Image2D::from_fn(32, 24, |x, y| ((x * 7 + y * 13) % 11) as f64 - (x as f64 * 0.3).sin());
        let twice = post_filter(&post_filter(&img, &cfg).unwrap(), &cfg).unwrap();
        let once = apply_radial_filter(&img, |rho| butterworth_response(&cfg, rho).powi(2));
        for (a, b) in twice.as_slice().iter().zip(once.as_slice()) {
            assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_bad_config() {
        let img = Image2D::zeros(4, 4);
        assert!(post_filter(&img, &FilterConfig { cutoff: 0.6, ..Default::default() }).is_err());
        assert!(post_filter(&img, &FilterConfig { order: 0, ..Default::default() }).is_err());
    }
}
