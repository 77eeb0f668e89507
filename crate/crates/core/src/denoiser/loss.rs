use serde::{Deserialize, Serialize};

use super::network::{backward, forward_cached, image_to_tensor, Params};
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::channels::{shift_channels, ChannelSet};
use crate::error::{Error, Result};
use crate::image::Image3D;
use crate::par;

/// Where the observer term is centred for defect-absent samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AbsentCentroidPolicy {
    /// One of the study's canonical defect centroids, redrawn every epoch.
    #[default]
    CanonicalRandom,
    LvCenter,
}

#[derive(Debug, Clone)]
pub struct LossConfig {
    pub lambda: f64,
    /// The observer term covers slices `centre - h ..= centre + h`.
    pub slice_half_width: usize,
    /// Built on the grid of the images the loss sees.
    pub channels: ChannelSet,
    pub absent_policy: AbsentCentroidPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub mse: f64,
    pub channel: f64,
}

impl LossTerms {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.mse.is_finite() && self.channel.is_finite()
    }

    pub(crate) fn add_scaled(&mut self, o: &LossTerms, k: f64) {
        self.total += k * o.total;
        self.mse += k * o.mse;
        self.channel += k * o.channel;
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::validation(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        Ok(())
    }

    /// Slice range of the observer term, kept inside `n_slices` like the ROI.
    pub fn slice_range(&self, centroid_slice: usize, n_slices: usize) -> std::ops::RangeInclusive<usize> {
        let h = self.slice_half_width;
        let centre = if n_slices > 2 * h { centroid_slice.clamp(h, n_slices - 1 - h) } else { centroid_slice.min(n_slices - 1) };
        centre.saturating_sub(h)..=(centre + h).min(n_slices - 1)
    }
}

/// Loss terms of one sample; adds `dL/dpred` into `grad` when given.
pub(crate) fn sample_loss<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    centroid: [usize; 3],
    cfg: &LossConfig,
    grad: Option<&mut Tensor<T>>,
) -> Result<LossTerms> {
    let g = cfg.channels.grid();
    if pred.w != g || pred.h != g {
        return Err(Error::validation(format!("loss channels are built on a {g} grid, images are {}x{}", pred.w, pred.h)));
    }
    if centroid[0] >= pred.w || centroid[1] >= pred.h || centroid[2] >= pred.c {
        return Err(Error::validation(format!("centroid {centroid:?} lies outside the volume")));
    }
    let diff: Vec<f64> = target.data.iter().zip(&pred.data).map(|(t, p)| t.f64() - p.f64()).collect();
    let mse: f64 = diff.iter().map(|d| d * d).sum();
    let shifted = shift_channels(&cfg.channels, [centroid[0], centroid[1]]).channels;
    let plane = pred.plane();
    let mut channel = 0.0;
    let mut responses = Vec::new();
    for s in cfg.slice_range(centroid[2], pred.c) {
        let d = &diff[s * plane..(s + 1) * plane];
        for t in shifted.templates() {
            let r: f64 = t.as_slice().iter().zip(d).map(|(u, v)| u * v).sum();
            channel += r * r;
            responses.push((s, r));
        }
    }
    if let Some(grad) = grad {
        for (gv, d) in grad.data.iter_mut().zip(&diff) {
            *gv += T::of(-2.0 * d);
        }
        let nc = shifted.n_channels();
        for (i, &(s, r)) in responses.iter().enumerate() {
            let u = shifted.templates()[i % nc].as_slice();
            let k = -2.0 * cfg.lambda * r;
            for (gv, uv) in grad.data[s * plane..(s + 1) * plane].iter_mut().zip(u) {
                *gv += T::of(k * uv);
            }
        }
    }
    Ok(LossTerms { total: mse + cfg.lambda * channel, mse, channel })
}

/// Per-sample loss terms: `||t - p||^2` over the volume plus
/// `lambda * sum_s ||(S U)(t[s] - p[s])||^2` around the centroid.
pub fn observer_loss(pred: &Image3D, target: &Image3D, centroid: Option<[usize; 3]>, cfg: &LossConfig) -> Result<LossTerms> {
    cfg.validate()?;
    if pred.dims() != target.dims() {
        return Err(Error::validation("prediction and target differ in shape"));
    }
    let c = centroid.ok_or_else(|| Error::validation("the observer term needs a defect centroid"))?;
    sample_loss::<f64>(&image_to_tensor(pred, 1.0), &image_to_tensor(target, 1.0), c, cfg, None)
}

/// One network input with its target and observer centroid.
#[derive(Debug, Clone)]
pub(crate) struct Item<T> {
    pub input: Tensor<T>,
    pub target: Tensor<T>,
    pub centroid: [usize; 3],
}

/// Batch-mean loss and its parameter gradient. Per-sample work may run in
/// parallel; the sum is always taken in batch order.
pub(crate) fn batch_gradient<T: Scalar>(params: &Params<T>, batch: &[Item<T>], cfg: &LossConfig) -> Result<(Params<T>, LossTerms)> {
    let per = par::map_slice(batch, |it| -> Result<(Params<T>, LossTerms)> {
        let (pred, cache) = forward_cached(params, &it.input);
        let mut dy = Tensor::zeros(pred.c, pred.h, pred.w);
        let terms = sample_loss(&pred, &it.target, it.centroid, cfg, Some(&mut dy))?;
        let mut g = Params::zeros(&params.arch)?;
        backward(params, &cache, dy, &mut g);
        Ok((g, terms))
    });
    let inv = 1.0 / batch.len() as f64;
    let mut grads = Params::zeros(&params.arch)?;
    let mut terms = LossTerms::default();
    for r in per {
        let (g, t) = r?;
        grads.axpy(T::of(inv), &g);
        terms.add_scaled(&t, inv);
    }
    Ok((grads, terms))
}

pub(crate) fn batch_loss<T: Scalar>(params: &Params<T>, batch: &[Item<T>], cfg: &LossConfig) -> Result<LossTerms> {
    let per = par::map_slice(batch, |it| sample_loss(&forward_cached(params, &it.input).0, &it.target, it.centroid, cfg, None));
    let mut terms = LossTerms::default();
    for t in per {
        terms.add_scaled(&t?, 1.0 / batch.len() as f64);
    }
    Ok(terms)
}

/// Gradient of the batch-mean loss with respect to every parameter,
/// on raw (unstandardized) images.
pub fn loss_gradient<T: Scalar>(
    params: &Params<T>,
    batch: &[(Image3D, Image3D, Option<[usize; 3]>)],
    cfg: &LossConfig,
) -> Result<(Params<T>, LossTerms)> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::validation("empty batch"));
    }
    let items = batch
        .iter()
        .map(|(low, normal, c)| {
            let (w, h, s) = low.dims();
            params.arch.check_input(s, h, w)?;
            if normal.dims() != low.dims() {
                return Err(Error::validation("low-dose and normal-dose volumes differ in shape"));
            }
            let centroid = c.ok_or_else(|| Error::validation("the observer term needs a defect centroid"))?;
            Ok(Item { input: image_to_tensor(low, 1.0), target: image_to_tensor(normal, 1.0), centroid })
        })
        .collect::<Result<Vec<_>>>()?;
    batch_gradient(params, &items, cfg)
}
