//! Voxel and projection containers.
//!
//! Images are stored row-major: `x` is the fastest axis, then `y`, then the
//! slice index. Values are `f64` in memory; the raw file format stores them
//! as `f32`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image2D {
    pub fn zeros(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        let mut img = Self::zeros(width, height);
        img.data.fill(value);
        img
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::validation("image dimensions must be positive"));
        }
        if data.len() != width * height {
            return Err(Error::validation(format!(
                "expected {} values for a {width}x{height} image, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!("non-finite value at index {i}")));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut img = Self::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                img.data[y * width + x] = f(x, y);
            }
        }
        img
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Image2D) -> f64 {
        debug_assert_eq!(self.data.len(), other.data.len());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { width: self.width, height: self.height, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn same_shape(&self, other: &Image2D) -> bool {
        self.width == other.width && self.height == other.height
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image3D {
    width: usize,
    height: usize,
    n_slices: usize,
    data: Vec<f64>,
}

impl Image3D {
    pub fn zeros(width: usize, height: usize, n_slices: usize) -> Self {
        assert!(width > 0 && height > 0 && n_slices > 0, "image dimensions must be positive");
        Self { width, height, n_slices, data: vec![0.0; width * height * n_slices] }
    }

    pub fn filled(width: usize, height: usize, n_slices: usize, value: f64) -> Self {
        let mut img = Self::zeros(width, height, n_slices);
        img.data.fill(value);
        img
    }

    pub fn from_vec(width: usize, height: usize, n_slices: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || n_slices == 0 {
            return Err(Error::validation("image dimensions must be positive"));
        }
        if data.len() != width * height * n_slices {
            return Err(Error::validation(format!(
                "expected {} values for a {width}x{height}x{n_slices} volume, got {}",
                width * height * n_slices,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!("non-finite value at index {i}")));
        }
        Ok(Self { width, height, n_slices, data })
    }

    pub fn from_slices(slices: &[Image2D]) -> Result<Self> {
        let first = slices.first().ok_or_else(|| Error::validation("no slices"))?;
        if slices.iter().any(|s| !s.same_shape(first)) {
            return Err(Error::validation("slices differ in shape"));
        }
        let data = slices.iter().flat_map(|s| s.as_slice().iter().copied()).collect();
        Ok(Self { width: first.width, height: first.height, n_slices: slices.len(), data })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn n_slices(&self) -> usize {
        self.n_slices
    }

    #[inline]
    pub fn slice_len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.n_slices)
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, s: usize) -> usize {
        (s * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, s: usize) -> f64 {
        self.data[self.index(x, y, s)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, s: usize, v: f64) {
        let i = self.index(x, y, s);
        self.data[i] = v;
    }

    pub fn slice(&self, s: usize) -> Image2D {
        let n = self.slice_len();
        Image2D { width: self.width, height: self.height, data: self.data[s * n..(s + 1) * n].to_vec() }
    }

    pub fn slice_values(&self, s: usize) -> &[f64] {
        let n = self.slice_len();
        &self.data[s * n..(s + 1) * n]
    }

    pub fn set_slice(&mut self, s: usize, img: &Image2D) {
        assert!(img.width == self.width && img.height == self.height, "slice shape mismatch");
        let n = self.slice_len();
        self.data[s * n..(s + 1) * n].copy_from_slice(img.as_slice());
    }

    pub fn slices(&self) -> impl Iterator<Item = Image2D> + '_ {
        (0..self.n_slices).map(move |s| self.slice(s))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            n_slices: self.n_slices,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_shape(&self, other: &Image3D) -> bool {
        self.dims() == other.dims()
    }

    /// Rounds every value to the nearest `f32`, i.e. the precision of the
    /// raw file format.
    pub fn to_f32_precision(&self) -> Self {
        self.map(|v| v as f32 as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SinogramKind {
    /// Noiseless expected counts.
    Expected,
    /// Sampled integral counts.
    Counts,
}

/// Projection data for one slice, stored angle-major: `values[a * n_bins + b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    n_angles: usize,
    n_bins: usize,
    kind: SinogramKind,
    data: Vec<f64>,
}

impl Sinogram {
    pub fn zeros(n_angles: usize, n_bins: usize, kind: SinogramKind) -> Self {
        assert!(n_angles > 0 && n_bins > 0, "sinogram dimensions must be positive");
        Self { n_angles, n_bins, kind, data: vec![0.0; n_angles * n_bins] }
    }

    pub fn from_vec(n_angles: usize, n_bins: usize, kind: SinogramKind, data: Vec<f64>) -> Result<Self> {
        if n_angles == 0 || n_bins == 0 {
            return Err(Error::validation("sinogram dimensions must be positive"));
        }
        if data.len() != n_angles * n_bins {
            return Err(Error::validation(format!(
                "expected {} sinogram values, got {}",
                n_angles * n_bins,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::validation(format!("sinogram value at index {i} is negative or non-finite")));
        }
        if kind == SinogramKind::Counts {
            if let Some(i) = data.iter().position(|v| v.fract() != 0.0) {
                return Err(Error::validation(format!("count sinogram value at index {i} is not integral")));
            }
        }
        Ok(Self { n_angles, n_bins, kind, data })
    }

    /// Constructor for internal producers that already guarantee the
    /// invariants.
    pub(crate) fn from_vec_unchecked(n_angles: usize, n_bins: usize, kind: SinogramKind, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), n_angles * n_bins);
        Self { n_angles, n_bins, kind, data }
    }

    pub fn n_angles(&self) -> usize {
        self.n_angles
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn kind(&self) -> SinogramKind {
        self.kind
    }

    pub fn get(&self, angle: usize, bin: usize) -> f64 {
        self.data[angle * self.n_bins + bin]
    }

    pub fn row(&self, angle: usize) -> &[f64] {
        &self.data[angle * self.n_bins..(angle + 1) * self.n_bins]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Sinogram) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}

/// Result of [`acyclic_shift`]. `out_of_range` is set when the offset is at
/// least as large as the image, in which case `image` is all zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct Shifted {
    pub image: Image2D,
    pub out_of_range: bool,
}

/// Shift without wraparound: `out[x, y] = img[x - dx, y - dy]` where the
/// source lies inside the image, zero elsewhere.
pub fn acyclic_shift(img: &Image2D, dx: i64, dy: i64) -> Shifted {
    let (w, h) = (img.width as i64, img.height as i64);
    let mut out = Image2D::zeros(img.width, img.height);
    let out_of_range = dx.abs() >= w || dy.abs() >= h;
    if out_of_range {
        return Shifted { image: out, out_of_range };
    }
    let x0 = dx.max(0);
    let x1 = (w + dx).min(w);
    let run = (x1 - x0) as usize;
    for y in dy.max(0)..(h + dy).min(h) {
        let sy = y - dy;
        let dst = (y * w + x0) as usize;
        let src = (sy * w + x0 - dx) as usize;
        out.data[dst..dst + run].copy_from_slice(&img.data[src..src + run]);
    }
    Shifted { image: out, out_of_range }
}
