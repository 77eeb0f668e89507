use rand::distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::layers::{self, ConvShape};
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::image::Image3D;
use crate::rng::RngStream;

/// Two-stage encoder-decoder over a short-axis stack, slices as channels.
///
/// `enc1 -> pool -> enc2 -> pool -> mid -> up (+enc2) -> dec2 -> up (+enc1)
/// -> dec1 -> 1x1 out -> rectifier`, every hidden convolution followed by a
/// rectifier. With `residual` the input is added before the final
/// rectifier, so a zero output layer gives the identity on nonnegative
/// images.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub n_slices: usize,
    pub widths: [usize; 2],
    pub kernel: usize,
    pub residual: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self { n_slices: 8, widths: [16, 32], kernel: 3, residual: true }
    }
}

pub const LAYER_NAMES: [&str; 6] = ["enc1", "enc2", "mid", "dec2", "dec1", "out"];

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_slices == 0 || self.widths.contains(&0) || self.kernel % 2 == 0 {
            return Err(Error::validation(format!("inconsistent architecture {self:?}")));
        }
        Ok(())
    }

    pub fn layer_shapes(&self) -> [ConvShape; 6] {
        let [w1, w2] = self.widths;
        let (s, k) = (self.n_slices, self.kernel);
        [
            ConvShape { c_in: s, c_out: w1, k },
            ConvShape { c_in: w1, c_out: w2, k },
            ConvShape { c_in: w2, c_out: w2, k },
            ConvShape { c_in: w2, c_out: w1, k },
            ConvShape { c_in: w1, c_out: w1, k },
            ConvShape { c_in: w1, c_out: s, k: 1 },
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes().iter().map(|s| s.weight_len() + s.c_out).sum()
    }

    /// Spatial sizes must survive two halvings.
    pub fn check_input(&self, c: usize, h: usize, w: usize) -> Result<()> {
        if c != self.n_slices || h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(Error::validation(format!(
                "input {w}x{h}x{c} does not fit the network ({} slices, sides divisible by 4)",
                self.n_slices
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub arch: ArchConfig,
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Scalar> Params<T> {
    pub fn zeros(arch: &ArchConfig) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.layer_shapes();
        Ok(Self {
            arch: arch.clone(),
            weights: shapes.iter().map(|s| vec![T::zero(); s.weight_len()]).collect(),
            biases: shapes.iter().map(|s| vec![T::zero(); s.c_out]).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Named tensors in checkpoint order.
    pub fn named(&self) -> Vec<(String, Vec<usize>, &[T])> {
        let shapes = self.arch.layer_shapes();
        let mut out = Vec::new();
        for (i, name) in LAYER_NAMES.iter().enumerate() {
            let s = shapes[i];
            out.push((format!("{name}.weight"), vec![s.c_out, s.c_in, s.k, s.k], self.weights[i].as_slice()));
            out.push((format!("{name}.bias"), vec![s.c_out], self.biases[i].as_slice()));
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| w.iter().chain(b))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.weights.iter_mut().zip(self.biases.iter_mut()).flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::of(x.f64())).collect();
        Params { arch: self.arch.clone(), weights: self.weights.iter().map(conv).collect(), biases: self.biases.iter().map(conv).collect() }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Self) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a = *a + alpha * *b;
        }
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_network<T: Scalar>(arch: &ArchConfig, rng: RngStream) -> Result<Params<T>> {
    let mut p = Params::zeros(arch)?;
    let mut g = rng.generator();
    for (i, s) in arch.layer_shapes().iter().enumerate() {
        let fan_in = (s.c_in * s.k * s.k) as f64;
        let fan_out = (s.c_out * s.k * s.k) as f64;
        let bound = (6.0 / (fan_in + fan_out)).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).map_err(|e| Error::validation(e.to_string()))?;
        for w in &mut p.weights[i] {
            *w = T::of(dist.sample(&mut g));
        }
    }
    Ok(p)
}

/// Activations kept for the backward pass.
pub(crate) struct Cache<T> {
    cols: Vec<Vec<T>>,
    e1: Tensor<T>,
    e2: Tensor<T>,
    m: Tensor<T>,
    d2: Tensor<T>,
    d1: Tensor<T>,
    y: Tensor<T>,
}

pub(crate) fn forward_cached<T: Scalar>(p: &Params<T>, x: &Tensor<T>) -> (Tensor<T>, Cache<T>) {
    forward_observed(p, x, &mut |_, _| {})
}

/// Like [`forward_cached`], showing every rectifier input to `observe`
/// together with the index of the layer that produced it.
pub(crate) fn forward_observed<T: Scalar>(
    p: &Params<T>,
    x: &Tensor<T>,
    observe: &mut dyn FnMut(usize, &Tensor<T>),
) -> (Tensor<T>, Cache<T>) {
    let sh = p.arch.layer_shapes();
    let mut cols = Vec::with_capacity(6);
    let mut conv_relu = |i: usize, input: &Tensor<T>, skip: Option<&Tensor<T>>| {
        let (mut z, c) = layers::conv_forward(input, sh[i], &p.weights[i], &p.biases[i]);
        cols.push(c);
        if let Some(s) = skip {
            z.add_assign(s);
        }
        observe(i, &z);
        layers::relu(&mut z);
        z
    };
    let e1 = conv_relu(0, x, None);
    let e2 = conv_relu(1, &layers::avg_pool(&e1), None);
    let m = conv_relu(2, &layers::avg_pool(&e2), None);
    let mut u2 = layers::upsample(&m);
    u2.add_assign(&e2);
    let d2 = conv_relu(3, &u2, None);
    let mut u1 = layers::upsample(&d2);
    u1.add_assign(&e1);
    let d1 = conv_relu(4, &u1, None);
    let y = conv_relu(5, &d1, p.arch.residual.then_some(x));
    let cache = Cache { cols, e1, e2, m, d2, d1, y: y.clone() };
    (y, cache)
}

/// Accumulates parameter gradients of `<dy, forward(x)>` into `grads`.
pub(crate) fn backward<T: Scalar>(p: &Params<T>, cache: &Cache<T>, mut dy: Tensor<T>, grads: &mut Params<T>) {
    let sh = p.arch.layer_shapes();
    let Params { weights: gw, biases: gb, .. } = grads;
    let mut conv_back = |i: usize, d: &Tensor<T>, need_dx: bool| {
        layers::conv_backward(d, &cache.cols[i], sh[i], &p.weights[i], &mut gw[i], &mut gb[i], need_dx)
    };
    layers::relu_backward(&cache.y, &mut dy);
    let mut dd1 = conv_back(5, &dy, true).unwrap();
    layers::relu_backward(&cache.d1, &mut dd1);
    let du1 = conv_back(4, &dd1, true).unwrap();
    let mut de1 = du1.clone();
    let mut dd2 = layers::upsample_backward(&du1);
    layers::relu_backward(&cache.d2, &mut dd2);
    let du2 = conv_back(3, &dd2, true).unwrap();
    let mut de2 = du2.clone();
    let mut dm = layers::upsample_backward(&du2);
    layers::relu_backward(&cache.m, &mut dm);
    let dp2 = conv_back(2, &dm, true).unwrap();
    de2.add_assign(&layers::avg_pool_backward(&dp2));
    layers::relu_backward(&cache.e2, &mut de2);
    let dp1 = conv_back(1, &de2, true).unwrap();
    de1.add_assign(&layers::avg_pool_backward(&dp1));
    layers::relu_backward(&cache.e1, &mut de1);
    conv_back(0, &de1, false);
}

pub(crate) fn image_to_tensor<T: Scalar>(img: &Image3D, scale: f64) -> Tensor<T> {
    let (w, h, s) = img.dims();
    Tensor::from_vec(s, h, w, img.as_slice().iter().map(|&v| T::of(v * scale)).collect())
}

pub(crate) fn tensor_to_image<T: Scalar>(t: &Tensor<T>, scale: f64) -> Result<Image3D> {
    Image3D::from_vec(t.w, t.h, t.c, t.data.iter().map(|v| v.f64() * scale).collect())
}

/// Raw network output (no standardization).
pub fn forward<T: Scalar>(params: &Params<T>, img: &Image3D) -> Result<Image3D> {
    let (w, h, s) = img.dims();
    params.arch.check_input(s, h, w)?;
    let (y, _) = forward_cached(params, &image_to_tensor(img, 1.0));
    tensor_to_image(&y, 1.0)
}
