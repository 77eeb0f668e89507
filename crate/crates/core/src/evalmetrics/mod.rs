//! Figures of merit: Mann-Whitney AUC with percentile bootstrap intervals,
//! RMSE and SSIM.

mod ssim;

pub use ssim::{ssim, ssim_slice, SsimConfig};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image3D;
use crate::par;
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    pub auc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_present: usize,
    pub n_absent: usize,
    pub n_boot: usize,
    pub seed: u64,
}

fn check_scores(p: &[f64], a: &[f64]) -> Result<()> {
    if p.is_empty() || a.is_empty() {
        return Err(Error::validation("AUC needs at least one score per class"));
    }
    if p.iter().chain(a).any(|s| s.is_nan()) {
        return Err(Error::validation("scores contain NaN"));
    }
    Ok(())
}

/// Twice the Mann-Whitney U statistic, counted exactly over tie groups.
fn twice_u(p: &[f64], a: &[f64]) -> u64 {
    let mut all: Vec<(f64, bool)> = p.iter().map(|&s| (s, true)).chain(a.iter().map(|&s| (s, false))).collect();
    all.sort_unstable_by(|x, y| x.0.total_cmp(&y.0));
    let (mut u2, mut below) = (0u64, 0u64);
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        let (mut gp, mut ga) = (0u64, 0u64);
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 { gp += 1 } else { ga += 1 }
            j += 1;
        }
        u2 += gp * (2 * below + ga);
        below += ga;
        i = j;
    }
    u2
}

pub fn auc_mann_whitney(present: &[f64], absent: &[f64]) -> Result<f64> {
    check_scores(present, absent)?;
    Ok(twice_u(present, absent) as f64 / (2 * present.len() * absent.len()) as f64)
}

fn resample<R: Rng>(x: &[f64], rng: &mut R) -> Vec<f64> {
    (0..x.len()).map(|_| x[rng.random_range(0..x.len())]).collect()
}

/// Linear-interpolated empirical quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn check_boot(p: &[f64], a: &[f64], n_boot: usize, level: f64) -> Result<()> {
    check_scores(p, a)?;
    if p.len() < 5 || a.len() < 5 {
        return Err(Error::validation("bootstrap needs at least 5 scores per class"));
    }
    if n_boot < 2 || !(level > 0.0 && level < 1.0) {
        return Err(Error::validation("bootstrap needs n_boot >= 2 and level in (0, 1)"));
    }
    Ok(())
}

/// Percentile bootstrap resampling within each class. Replicate `b` draws
/// from `rng.derive(b)`, so the result does not depend on thread count.
pub fn auc_bootstrap_ci(present: &[f64], absent: &[f64], n_boot: usize, level: f64, rng: RngStream) -> Result<RocResult> {
    check_boot(present, absent, n_boot, level)?;
    let auc = auc_mann_whitney(present, absent)?;
    let mut reps = par::map_range(n_boot, |b| {
        let mut g = rng.derive(b as u64).generator();
        let p = resample(present, &mut g);
        let a = resample(absent, &mut g);
        twice_u(&p, &a) as f64 / (2 * p.len() * a.len()) as f64
    });
    reps.sort_unstable_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(RocResult {
        auc,
        ci_low: quantile(&reps, tail),
        ci_high: quantile(&reps, 1.0 - tail),
        n_present: present.len(),
        n_absent: absent.len(),
        n_boot,
        seed: rng.seed,
    })
}

/// Bootstrap of `AUC(b) - AUC(a)` for two readings of the same cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDiff {
    pub diff: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Fraction of replicates with a strictly positive difference.
    pub frac_positive: f64,
    pub n_boot: usize,
}

/// Cases are resampled jointly, so index `i` of `present_a` and
/// `present_b` must refer to the same image (likewise for absent).
pub fn paired_auc_diff(
    present_a: &[f64],
    absent_a: &[f64],
    present_b: &[f64],
    absent_b: &[f64],
    n_boot: usize,
    level: f64,
    rng: RngStream,
) -> Result<PairedDiff> {
    check_boot(present_a, absent_a, n_boot, level)?;
    check_boot(present_b, absent_b, n_boot, level)?;
    if present_a.len() != present_b.len() || absent_a.len() != absent_b.len() {
        return Err(Error::validation("paired bootstrap needs equally sized score sets"));
    }
    let diff = auc_mann_whitney(present_b, absent_b)? - auc_mann_whitney(present_a, absent_a)?;
    let (np, na) = (present_a.len(), absent_a.len());
    let mut reps = par::map_range(n_boot, |b| {
        let mut g = rng.derive(b as u64).generator();
        let ip: Vec<usize> = (0..np).map(|_| g.random_range(0..np)).collect();
        let ia: Vec<usize> = (0..na).map(|_| g.random_range(0..na)).collect();
        let pick = |x: &[f64], idx: &[usize]| idx.iter().map(|&i| x[i]).collect::<Vec<_>>();
        let den = (2 * np * na) as f64;
        twice_u(&pick(present_b, &ip), &pick(absent_b, &ia)) as f64 / den
            - twice_u(&pick(present_a, &ip), &pick(absent_a, &ia)) as f64 / den
    });
    reps.sort_unstable_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(PairedDiff {
        diff,
        ci_low: quantile(&reps, tail),
        ci_high: quantile(&reps, 1.0 - tail),
        frac_positive: reps.iter().filter(|&&d| d > 0.0).count() as f64 / n_boot as f64,
        n_boot,
    })
}

pub fn rmse(a: &Image3D, b: &Image3D) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::validation(format!("RMSE of {:?} and {:?} volumes", a.dims(), b.dims())));
    }
    let n = a.as_slice().len();
    let ss: f64 = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((ss / n as f64).sqrt())
}
