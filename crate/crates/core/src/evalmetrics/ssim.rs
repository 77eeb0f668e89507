use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image2D, Image3D};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range `L`; computed from both images when absent.
    pub data_range: Option<f64>,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03, data_range: None }
    }
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = g.iter().sum();
    g.iter().map(|v| v / total).collect()
}

/// Valid-mode separable filtering of a `w x h` map with the 1-D kernel `g`.
fn filter_valid(v: &[f64], w: usize, h: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let src = &v[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = g.iter().zip(&src[x..x + k]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for (j, gj) in g.iter().enumerate() {
            let src = &rows[(y + j) * ow..(y + j + 1) * ow];
            for (o, r) in out[y * ow..(y + 1) * ow].iter_mut().zip(src) {
                *o += gj * r;
            }
        }
    }
    out
}

/// Mean SSIM over every window that fits entirely inside the slice.
pub fn ssim_slice(a: &Image2D, b: &Image2D, l: f64, cfg: &SsimConfig) -> Result<f64> {
    let (w, h, k) = (a.width(), a.height(), cfg.window);
    if !a.same_shape(b) {
        return Err(Error::validation("SSIM inputs differ in shape"));
    }
    if k == 0 || k > w || k > h {
        return Err(Error::validation(format!("SSIM window {k} does not fit a {w}x{h} slice")));
    }
    let g = gaussian_window(k, cfg.sigma);
    let c1 = (cfg.k1 * l).powi(2);
    let c2 = (cfg.k2 * l).powi(2);
    // moments are accumulated about a common offset to limit cancellation
    let off = (a.sum() + b.sum()) / (2 * w * h) as f64;
    let p: Vec<f64> = a.as_slice().iter().map(|v| v - off).collect();
    let q: Vec<f64> = b.as_slice().iter().map(|v| v - off).collect();
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { p.iter().zip(&q).map(|(&x, &y)| f(x, y)).collect() };
    let ma = filter_valid(&p, w, h, &g);
    let mb = filter_valid(&q, w, h, &g);
    let aa = filter_valid(&prod(&|x, _| x * x), w, h, &g);
    let bb = filter_valid(&prod(&|_, y| y * y), w, h, &g);
    let ab = filter_valid(&prod(&|x, y| x * y), w, h, &g);
    let mut total = 0.0;
    for i in 0..ma.len() {
        let (va, vb, cab) = (aa[i] - ma[i] * ma[i], bb[i] - mb[i] * mb[i], ab[i] - ma[i] * mb[i]);
        let (ma, mb) = (ma[i] + off, mb[i] + off);
        total += ((2.0 * ma * mb + c1) * (2.0 * cab + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / ma.len() as f64)
}

/// Slice-averaged SSIM of two volumes.
pub fn ssim(a: &Image3D, b: &Image3D, cfg: &SsimConfig) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::validation(format!("SSIM of {:?} and {:?} volumes", a.dims(), b.dims())));
    }
    if a.as_slice() == b.as_slice() {
        return Ok(1.0);
    }
    let l = match cfg.data_range {
        Some(l) => l,
        None => {
            let all = a.as_slice().iter().chain(b.as_slice());
            let hi = all.clone().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lo = all.fold(f64::INFINITY, |m, &v| m.min(v));
            hi - lo
        }
    };
    if !(l > 0.0) {
        return Err(Error::validation(format!("SSIM data range must be positive, got {l}")));
    }
    let mut total = 0.0;
    for s in 0..a.n_slices() {
        total += ssim_slice(&a.slice(s), &b.slice(s), l, cfg)?;
    }
    Ok(total / a.n_slices() as f64)
}
