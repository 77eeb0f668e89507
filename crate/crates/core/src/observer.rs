//! Channelized Hotelling observer.
//!
//! The template is `w = (S + eps I)^-1 (mean_present - mean_absent)` where
//! `S` is the average of the two unbiased class covariances. Leave-one-out
//! scoring removes the held-out vector from both its class mean and its
//! class covariance before scoring it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    DefectPresent,
    DefectAbsent,
}

/// Feature vectors of one class, one row per image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub label: Label,
    rows: Vec<Vec<f64>>,
}

impl FeatureSet {
    pub fn new(label: Label, rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = rows.first().map(Vec::len).unwrap_or(0);
        if d == 0 {
            return Err(Error::validation("feature set needs at least one non-empty vector"));
        }
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::validation("feature vectors differ in length"));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::validation("feature vectors contain non-finite values"));
        }
        Ok(Self { label, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// Diagonal loading added to the pooled covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ridge {
    Fixed(f64),
    /// `eps = factor * trace(S) / D`.
    TraceScaled(f64),
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::TraceScaled(1e-6)
    }
}

impl Ridge {
    fn epsilon(&self, cov: &[f64], d: usize) -> f64 {
        match *self {
            Ridge::Fixed(e) => e,
            Ridge::TraceScaled(f) => f * (0..d).map(|i| cov[i * d + i]).sum::<f64>() / d as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotellingTemplate {
    pub delta_mean: Vec<f64>,
    /// Row-major `D x D`.
    pub pooled_cov: Vec<f64>,
    pub ridge: f64,
    pub w: Vec<f64>,
}

impl HotellingTemplate {
    pub fn dim(&self) -> usize {
        self.w.len()
    }
}

/// Mean and scatter matrix `sum (x - mean)(x - mean)^T`.
struct Moments {
    n: usize,
    mean: Vec<f64>,
    scatter: Vec<f64>,
}

impl Moments {
    fn of(rows: &[Vec<f64>]) -> Self {
        let d = rows[0].len();
        let n = rows.len();
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut scatter = vec![0.0; d * d];
        for r in rows {
            for i in 0..d {
                let di = r[i] - mean[i];
                for j in 0..d {
                    scatter[i * d + j] += di * (r[j] - mean[j]);
                }
            }
        }
        Self { n, mean, scatter }
    }

    /// Moments with row `x` removed (exact rank-one downdate).
    fn without(&self, x: &[f64]) -> Self {
        let d = self.mean.len();
        let n = self.n as f64;
        let diff: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let mean = self.mean.iter().zip(x).map(|(m, v)| (n * m - v) / (n - 1.0)).collect();
        let k = n / (n - 1.0);
        let mut scatter = self.scatter.clone();
        for i in 0..d {
            for j in 0..d {
                scatter[i * d + j] -= k * diff[i] * diff[j];
            }
        }
        Self { n: self.n - 1, mean, scatter }
    }

    fn cov(&self) -> impl Iterator<Item = f64> + '_ {
        let denom = (self.n - 1) as f64;
        self.scatter.iter().map(move |s| s / denom)
    }
}

fn template_from(present: &Moments, absent: &Moments, ridge: Ridge) -> Result<HotellingTemplate> {
    let d = present.mean.len();
    let pooled_cov: Vec<f64> = present.cov().zip(absent.cov()).map(|(a, b)| 0.5 * (a + b)).collect();
    let eps = ridge.epsilon(&pooled_cov, d);
    let delta_mean: Vec<f64> = present.mean.iter().zip(&absent.mean).map(|(a, b)| a - b).collect();
    let mut m = pooled_cov.clone();
    for i in 0..d {
        m[i * d + i] += eps;
    }
    let w = cholesky_solve(&m, d, &delta_mean)?;
    Ok(HotellingTemplate { delta_mean, pooled_cov, ridge: eps, w })
}

/// Solves `A x = b` for symmetric positive definite `A` (row-major `d x d`).
pub fn cholesky_solve(a: &[f64], d: usize, b: &[f64]) -> Result<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    let (mut min_piv, mut max_piv) = (f64::INFINITY, 0.0f64);
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                let scale = a[i * d + i].abs().max(f64::MIN_POSITIVE);
                if !(s > 1e-13 * scale) {
                    let cond = if s > 0.0 { max_piv.max(s) / s } else { f64::INFINITY };
                    return Err(Error::numeric(format!(
                        "pooled covariance (plus ridge) is singular: pivot {i} = {s:e}, condition estimate {cond:e}"
                    )));
                }
                min_piv = min_piv.min(s);
                max_piv = max_piv.max(s);
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    let cond = max_piv / min_piv;
    if cond > 1e14 {
        return Err(Error::numeric(format!("pooled covariance is numerically singular, condition estimate {cond:e}")));
    }
    let mut y = vec![0.0; d];
    for i in 0..d {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * d + k] * y[k];
        }
        y[i] = s / l[i * d + i];
    }
    let mut x = vec![0.0; d];
    for i in (0..d).rev() {
        let mut s = y[i];
        for k in i + 1..d {
            s -= l[k * d + i] * x[k];
        }
        x[i] = s / l[i * d + i];
    }
    Ok(x)
}

fn check_pair(present: &FeatureSet, absent: &FeatureSet, min: usize) -> Result<()> {
    if present.len() < min || absent.len() < min {
        return Err(Error::validation(format!(
            "each class needs at least {min} vectors (got {} present, {} absent)",
            present.len(),
            absent.len()
        )));
    }
    if present.dim() != absent.dim() {
        return Err(Error::validation("present and absent features differ in dimension"));
    }
    Ok(())
}

pub fn hotelling_train(present: &FeatureSet, absent: &FeatureSet, ridge: Ridge) -> Result<HotellingTemplate> {
    check_pair(present, absent, 2)?;
    template_from(&Moments::of(present.rows()), &Moments::of(absent.rows()), ridge)
}

pub fn apply_template(t: &HotellingTemplate, v: &[f64]) -> Result<f64> {
    if v.len() != t.dim() {
        return Err(Error::validation(format!("feature length {} does not match template {}", v.len(), t.dim())));
    }
    Ok(t.w.iter().zip(v).map(|(a, b)| a * b).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LooScores {
    pub present: Vec<f64>,
    pub absent: Vec<f64>,
}

/// Scores every vector with a template trained on all other vectors.
pub fn loo_scores(present: &FeatureSet, absent: &FeatureSet, ridge: Ridge) -> Result<LooScores> {
    check_pair(present, absent, 3)?;
    let mp = Moments::of(present.rows());
    let ma = Moments::of(absent.rows());
    let np = present.len();
    let scores = par::try_map_range(np + absent.len(), |i| {
        let (t, x) = if i < np {
            let x = &present.rows()[i];
            (template_from(&mp.without(x), &ma, ridge)?, x)
        } else {
            let x = &absent.rows()[i - np];
            (template_from(&mp, &ma.without(x), ridge)?, x)
        };
        apply_template(&t, x)
    })?;
    let absent_scores = scores[np..].to_vec();
    let mut present_scores = scores;
    present_scores.truncate(np);
    Ok(LooScores { present: present_scores, absent: absent_scores })
}
