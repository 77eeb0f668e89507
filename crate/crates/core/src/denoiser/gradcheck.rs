//! Finite-difference verification of the analytic gradient.
//!
//! Central differences are only an oracle where no rectifier changes state
//! inside the stencil. [`condition_rectifiers`] sets the biases so that on
//! the given inputs every rectifier channel is either active or inactive
//! with a margin; each probe then re-checks the activation pattern.

use rand::Rng;

use super::loss::{observer_loss, loss_gradient, LossConfig};
use super::network::{forward, forward_observed, image_to_tensor, Params, LAYER_NAMES};
use crate::error::{Error, Result};
use crate::image::Image3D;
use crate::rng::RngStream;

/// Sign pattern of every rectifier input over a set of images.
fn pattern(p: &Params<f64>, inputs: &[Image3D]) -> Vec<bool> {
    let mut out = Vec::new();
    for x in inputs {
        forward_observed(p, &image_to_tensor(x, 1.0), &mut |_, z| out.extend(z.data.iter().map(|&v| v > 0.0)));
    }
    out
}

/// Smallest distance of any rectifier input from zero.
pub fn rectifier_margin(p: &Params<f64>, inputs: &[Image3D]) -> f64 {
    let mut m = f64::INFINITY;
    for x in inputs {
        forward_observed(p, &image_to_tensor(x, 1.0), &mut |_, z| m = z.data.iter().fold(m, |a, v| a.min(v.abs())));
    }
    m
}

/// Shifts each bias, layer by layer, so that its channel is wholly active
/// (or, with probability `p_dead`, wholly inactive) on all `inputs` with at
/// least `margin` to spare. Output channels are always kept active.
pub fn condition_rectifiers(p: &mut Params<f64>, inputs: &[Image3D], margin: f64, p_dead: f64, rng: RngStream) -> Result<()> {
    if inputs.is_empty() || !(margin > 0.0) {
        return Err(Error::validation("need inputs and a positive margin"));
    }
    let mut g = rng.generator();
    for layer in 0..LAYER_NAMES.len() {
        let n = p.biases[layer].len();
        let (mut lo, mut hi) = (vec![f64::INFINITY; n], vec![f64::NEG_INFINITY; n]);
        for x in inputs {
            forward_observed(p, &image_to_tensor(x, 1.0), &mut |i, z| {
                if i == layer {
                    for (c, plane) in z.data.chunks(z.plane()).enumerate() {
                        lo[c] = plane.iter().fold(lo[c], |a, &v| a.min(v));
                        hi[c] = plane.iter().fold(hi[c], |a, &v| a.max(v));
                    }
                }
            });
        }
        for c in 0..n {
            let dead = layer + 1 < LAYER_NAMES.len() && g.random_bool(p_dead);
            p.biases[layer][c] += if dead { -hi[c] - margin } else { -lo[c] + margin };
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub n_params: usize,
    pub max_rel_error: f64,
    pub worst: String,
    /// Probes whose stencil changed some rectifier's state.
    pub pattern_changes: usize,
}

/// Compares every parameter's analytic gradient of the batch-mean loss with
/// a central difference of step `h`. The relative error is
/// `|a - n| / max(|a|, |n|, floor)`, where `floor` is `1e-9` times the
/// largest gradient entry.
pub fn finite_difference_check(
    p: &Params<f64>,
    batch: &[(Image3D, Image3D, Option<[usize; 3]>)],
    cfg: &LossConfig,
    h: f64,
) -> Result<GradCheckReport> {
    let (g, _) = loss_gradient(p, batch, cfg)?;
    let inputs: Vec<Image3D> = batch.iter().map(|b| b.0.clone()).collect();
    let base = pattern(p, &inputs);
    let total = |q: &Params<f64>| -> Result<f64> {
        let mut s = 0.0;
        for (l, n, c) in batch {
            s += observer_loss(&forward(q, l)?, n, *c, cfg)?.total;
        }
        Ok(s / batch.len() as f64)
    };
    let floor = 1e-9 * g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut report = GradCheckReport { n_params: 0, max_rel_error: 0.0, worst: String::new(), pattern_changes: 0 };
    for layer in 0..LAYER_NAMES.len() {
        for bias in [false, true] {
            let len = if bias { p.biases[layer].len() } else { p.weights[layer].len() };
            for i in 0..len {
                let probe = |d: f64| -> Result<(f64, bool)> {
                    let mut q = p.clone();
                    *(if bias { &mut q.biases[layer][i] } else { &mut q.weights[layer][i] }) += d;
                    Ok((total(&q)?, pattern(&q, &inputs) != base))
                };
                let ((up, cu), (down, cd)) = (probe(h)?, probe(-h)?);
                report.pattern_changes += usize::from(cu || cd);
                let fd = (up - down) / (2.0 * h);
                let an = if bias { g.biases[layer][i] } else { g.weights[layer][i] };
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(floor);
                report.n_params += 1;
                if rel > report.max_rel_error {
                    report.max_rel_error = rel;
                    report.worst = format!("{}.{}[{i}]: analytic {an:e}, numeric {fd:e}", LAYER_NAMES[layer], if bias { "bias" } else { "weight" });
                }
            }
        }
    }
    Ok(report)
}
