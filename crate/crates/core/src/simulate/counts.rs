use rand_distr::{Binomial, Distribution, Poisson};

use crate::error::{Error, Result};
use crate::image::{Sinogram, SinogramKind};
use crate::rng::RngStream;

/// Rescales `expected` to a total of `scale` counts and draws each bin from
/// an independent Poisson distribution.
pub fn poisson_counts(expected: &Sinogram, scale: f64, rng: RngStream) -> Result<Sinogram> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::validation(format!("count scale must be positive, got {scale}")));
    }
    if let Some(i) = expected.as_slice().iter().position(|v| !(*v >= 0.0)) {
        return Err(Error::validation(format!("expected counts must be nonnegative (bin {i})")));
    }
    let total = expected.sum();
    let factor = if total > 0.0 { scale / total } else { 0.0 };
    let mut g = rng.generator();
    let data = expected
        .as_slice()
        .iter()
        .map(|&v| {
            let lambda = v * factor;
            if lambda > 0.0 {
                Poisson::new(lambda).map(|d| d.sample(&mut g)).map_err(|e| Error::numeric(format!("poisson({lambda}): {e}")))
            } else {
                Ok(0.0)
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Sinogram::from_vec_unchecked(expected.n_angles(), expected.n_bins(), SinogramKind::Counts, data))
}

/// Keeps each detected count independently with probability `p`.
pub fn binomial_thin(counts: &Sinogram, p: f64, rng: RngStream) -> Result<Sinogram> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::validation(format!("thinning fraction {p} outside [0, 1]")));
    }
    if let Some(i) = counts.as_slice().iter().position(|v| !(*v >= 0.0) || v.fract() != 0.0) {
        return Err(Error::validation(format!("bin {i} is not a nonnegative integral count")));
    }
    let mut g = rng.generator();
    let data = counts
        .as_slice()
        .iter()
        .map(|&k| {
            if k == 0.0 || p == 0.0 {
                return Ok(0.0);
            }
            if p == 1.0 {
                return Ok(k);
            }
            Binomial::new(k as u64, p)
                .map(|d| d.sample(&mut g) as f64)
                .map_err(|e| Error::numeric(format!("binomial({k}, {p}): {e}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Sinogram::from_vec_unchecked(counts.n_angles(), counts.n_bins(), SinogramKind::Counts, data))
}
