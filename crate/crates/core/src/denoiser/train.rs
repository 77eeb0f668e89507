use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{batch_gradient, batch_loss, AbsentCentroidPolicy, Item, LossConfig, LossTerms};
use super::network::{forward_cached, image_to_tensor, init_network, tensor_to_image, ArchConfig, Params};
use super::scalar::Scalar;
use crate::error::{Error, Result};
use crate::image::Image3D;
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub validation_fraction: f64,
    /// Train on square windows of this side around the observer centroid.
    pub crop: Option<usize>,
    /// Jitter each training crop by up to a quarter of its side and apply a
    /// random flip/transpose, so the network cannot learn where defects sit.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 8,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            validation_fraction: 0.1,
            crop: Some(32),
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.epochs > 0
            && self.batch_size > 0
            && self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.adam_eps > 0.0
            && (0.0..1.0).contains(&self.validation_fraction)
            && self.crop.is_none_or(|c| c > 0 && c % 4 == 0);
        if !ok {
            return Err(Error::validation(format!("invalid training configuration {self:?}")));
        }
        Ok(())
    }
}

/// A paired low-dose / normal-dose volume.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub low: Image3D,
    pub normal: Image3D,
    /// `None` for defect-absent samples.
    pub centroid: Option<[usize; 3]>,
    /// Candidate observer centres for defect-absent samples.
    pub absent_centroids: Vec<[usize; 3]>,
    pub lv_center: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_total: f64,
    pub train_mse: f64,
    pub train_channel: f64,
    pub val_total: f64,
    pub val_mse: f64,
    pub val_channel: f64,
}

impl EpochRecord {
    fn new(epoch: usize, train: LossTerms, val: LossTerms) -> Self {
        Self {
            epoch,
            train_total: train.total,
            train_mse: train.mse,
            train_channel: train.channel,
            val_total: val.total,
            val_mse: val.mse,
            val_channel: val.channel,
        }
    }
}

/// Epoch 0 is the untrained network.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_total,train_mse,train_channel,val_total,val_mse,val_channel\n");
        for r in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.epoch, r.train_total, r.train_mse, r.train_channel, r.val_total, r.val_mse, r.val_channel
            ));
        }
        s
    }
}

/// Factor that brings a volume to unit mean; applied to input and target
/// and inverted on output.
pub fn input_scale(img: &Image3D) -> f64 {
    let mean = img.sum() / img.len() as f64;
    if mean > 0.0 && mean.is_finite() { 1.0 / mean } else { 1.0 }
}

/// Applies the network in standardized units and maps the result back.
pub fn denoise<T: Scalar>(params: &Params<T>, img: &Image3D) -> Result<Image3D> {
    let (w, h, s) = img.dims();
    params.arch.check_input(s, h, w)?;
    let k = input_scale(img);
    let (y, _) = forward_cached(params, &image_to_tensor(img, k));
    tensor_to_image(&y, 1.0 / k)
}

fn crop_window(centre: usize, size: usize, extent: usize) -> usize {
    centre.saturating_sub(size / 2).min(extent - size)
}

fn crop(img: &Image3D, x0: usize, y0: usize, size: usize) -> Image3D {
    let (_, _, n) = img.dims();
    let mut out = Image3D::zeros(size, size, n);
    for s in 0..n {
        for y in 0..size {
            for x in 0..size {
                out.set(x, y, s, img.get(x0 + x, y0 + y, s));
            }
        }
    }
    out
}

fn resolve_centroid(s: &TrainSample, policy: AbsentCentroidPolicy, rng: RngStream) -> Result<[usize; 3]> {
    match (s.centroid, policy) {
        (Some(c), _) => Ok(c),
        (None, AbsentCentroidPolicy::LvCenter) => Ok(s.lv_center),
        (None, AbsentCentroidPolicy::CanonicalRandom) => {
            if s.absent_centroids.is_empty() {
                return Err(Error::validation("defect-absent sample has no canonical centroids"));
            }
            Ok(s.absent_centroids[rng.generator().random_range(0..s.absent_centroids.len())])
        }
    }
}

/// One of the eight symmetries of a square slice: optional transpose, then
/// optional mirror of each axis.
#[derive(Debug, Clone, Copy, Default)]
struct Dihedral {
    transpose: bool,
    flip_x: bool,
    flip_y: bool,
}

impl Dihedral {
    fn random(rng: &mut impl Rng) -> Self {
        Self { transpose: rng.random(), flip_x: rng.random(), flip_y: rng.random() }
    }

    fn map(self, x: usize, y: usize, size: usize) -> (usize, usize) {
        let (x, y) = if self.transpose { (y, x) } else { (x, y) };
        (if self.flip_x { size - 1 - x } else { x }, if self.flip_y { size - 1 - y } else { y })
    }

    fn apply(self, img: &Image3D) -> Image3D {
        let (size, _, n) = img.dims();
        let mut out = Image3D::zeros(size, size, n);
        for s in 0..n {
            for y in 0..size {
                for x in 0..size {
                    let (u, v) = self.map(x, y, size);
                    out.set(u, v, s, img.get(x, y, s));
                }
            }
        }
        out
    }
}

fn jitter(centre: usize, size: usize, rng: &mut impl Rng) -> usize {
    let r = (size / 4) as i64;
    (centre as i64 + rng.random_range(-r..=r)).max(0) as usize
}

fn make_item<T: Scalar>(
    s: &TrainSample,
    centroid: [usize; 3],
    crop_size: Option<usize>,
    augment: Option<RngStream>,
) -> Result<Item<T>> {
    let k = input_scale(&s.low);
    let (w, h, _) = s.low.dims();
    match crop_size {
        None => Ok(Item { input: image_to_tensor(&s.low, k), target: image_to_tensor(&s.normal, k), centroid }),
        Some(c) => {
            if c > w || c > h {
                return Err(Error::validation(format!("crop {c} exceeds the {w}x{h} slices")));
            }
            let mut rng = augment.map(|r| r.generator());
            let (cx, cy, sym) = match rng.as_mut() {
                Some(g) => (jitter(centroid[0], c, g), jitter(centroid[1], c, g), Dihedral::random(g)),
                None => (centroid[0], centroid[1], Dihedral::default()),
            };
            let x0 = crop_window(cx, c, w);
            let y0 = crop_window(cy, c, h);
            let (u, v) = sym.map(centroid[0] - x0, centroid[1] - y0, c);
            Ok(Item {
                input: image_to_tensor(&sym.apply(&crop(&s.low, x0, y0, c)), k),
                target: image_to_tensor(&sym.apply(&crop(&s.normal, x0, y0, c)), k),
                centroid: [u, v, centroid[2]],
            })
        }
    }
}

struct Adam<T> {
    m: Params<T>,
    v: Params<T>,
    step: i32,
}

impl<T: Scalar> Adam<T> {
    fn new(arch: &ArchConfig) -> Result<Self> {
        Ok(Self { m: Params::zeros(arch)?, v: Params::zeros(arch)?, step: 0 })
    }

    fn update(&mut self, p: &mut Params<T>, g: &Params<T>, cfg: &TrainConfig) {
        self.step += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let lr = cfg.learning_rate * (1.0 - b2.powi(self.step)).sqrt() / (1.0 - b1.powi(self.step));
        let (b1, b2, lr, eps) = (T::of(b1), T::of(b2), T::of(lr), T::of(cfg.adam_eps));
        let one = T::one();
        for (((w, gi), m), v) in p.iter_mut().zip(g.iter()).zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            *m = b1 * *m + (one - b1) * *gi;
            *v = b2 * *v + (one - b2) * *gi * *gi;
            *w = *w - lr * *m / (v.sqrt() + eps);
        }
    }
}

/// Mini-batch Adam on the observer-aware loss. Sample order, validation split and
/// absent-sample centroids all come from fixed streams derived from
/// `train_cfg.seed`.
pub fn train<T: Scalar>(
    dataset: &[TrainSample],
    arch: &ArchConfig,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
) -> Result<(Params<T>, History)> {
    let root = RngStream::new(train_cfg.seed, 0x7d);
    let params = init_network(arch, root.derive(1))?;
    train_from(params, dataset, loss_cfg, train_cfg)
}

pub fn train_from<T: Scalar>(
    mut params: Params<T>,
    dataset: &[TrainSample],
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
) -> Result<(Params<T>, History)> {
    train_cfg.validate()?;
    loss_cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::validation("empty training set"));
    }
    let arch = params.arch.clone();
    for s in dataset {
        let (w, h, n) = s.low.dims();
        let (cw, ch) = train_cfg.crop.map_or((w, h), |c| (c, c));
        arch.check_input(n, ch, cw)?;
        if s.normal.dims() != s.low.dims() {
            return Err(Error::validation("low-dose and normal-dose volumes differ in shape"));
        }
    }
    let root = RngStream::new(train_cfg.seed, 0x7d);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut root.derive(2).generator());
    let n_val = if dataset.len() > 1 {
        ((dataset.len() as f64 * train_cfg.validation_fraction).round() as usize).min(dataset.len() - 1)
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let val_items = val_idx
        .iter()
        .map(|&i| {
            let c = resolve_centroid(&dataset[i], loss_cfg.absent_policy, root.derive_path(&[3, i as u64]))?;
            make_item::<T>(&dataset[i], c, train_cfg.crop, None)
        })
        .collect::<Result<Vec<_>>>()?;
    let items_for = |epoch: u64, idx: &[usize]| -> Result<Vec<Item<T>>> {
        idx.iter()
            .map(|&i| {
                let c = resolve_centroid(&dataset[i], loss_cfg.absent_policy, root.derive_path(&[4, epoch, i as u64]))?;
                let aug = train_cfg.augment.then(|| root.derive_path(&[6, epoch, i as u64]));
                make_item(&dataset[i], c, train_cfg.crop, aug)
            })
            .collect()
    };
    let eval = |p: &Params<T>, items: &[Item<T>]| -> Result<LossTerms> {
        if items.is_empty() {
            return Ok(LossTerms { total: f64::NAN, mse: f64::NAN, channel: f64::NAN });
        }
        let mut acc = LossTerms::default();
        for chunk in items.chunks(train_cfg.batch_size) {
            acc.add_scaled(&batch_loss(p, chunk, loss_cfg)?, chunk.len() as f64 / items.len() as f64);
        }
        Ok(acc)
    };

    let mut history = History::default();
    let first = eval(&params, &items_for(0, train_idx)?)?;
    history.epochs.push(EpochRecord::new(0, first, eval(&params, &val_items)?));
    let mut adam = Adam::new(&arch)?;
    for epoch in 1..=train_cfg.epochs {
        let mut idx = train_idx.to_vec();
        idx.shuffle(&mut root.derive_path(&[5, epoch as u64]).generator());
        let mut acc = LossTerms::default();
        for (b, chunk) in idx.chunks(train_cfg.batch_size).enumerate() {
            let items = items_for(epoch as u64, chunk)?;
            let (grads, terms) = batch_gradient(&params, &items, loss_cfg)?;
            if !terms.is_finite() || !grads.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite loss at epoch {epoch}, batch {b}: total {}, mse {}, channel {}",
                    terms.total, terms.mse, terms.channel
                )));
            }
            adam.update(&mut params, &grads, train_cfg);
            acc.add_scaled(&terms, chunk.len() as f64 / idx.len() as f64);
        }
        let val = eval(&params, &val_items)?;
        log::debug!("epoch {epoch}: train {:.5} (mse {:.5}, channel {:.5}), val {:.5}", acc.total, acc.mse, acc.channel, val.total);
        history.epochs.push(EpochRecord::new(epoch, acc, val));
    }
    if !params.is_finite() {
        return Err(Error::numeric("training produced non-finite parameters"));
    }
    Ok((params, history))
}
