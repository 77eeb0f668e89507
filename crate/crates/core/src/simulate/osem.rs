use serde::{Deserialize, Serialize};

use super::projector::{Geometry, Projector};
use crate::error::{Error, Result};
use crate::image::{Image2D, Sinogram};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconConfig {
    pub n_iterations: usize,
    /// Must divide the number of views. Angle `a` belongs to subset
    /// `a % n_subsets`.
    pub n_subsets: usize,
    /// Uniform starting value. `None` picks the mean activity implied by the
    /// data: total counts per view spread over the field of view.
    pub init_value: Option<f64>,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self { n_iterations: 4, n_subsets: 6, init_value: None }
    }
}

impl ReconConfig {
    pub fn validate(&self, geom: &Geometry) -> Result<()> {
        if self.n_iterations == 0 {
            return Err(Error::validation("OSEM needs at least one iteration"));
        }
        if self.n_subsets == 0 || geom.n_angles % self.n_subsets != 0 {
            return Err(Error::validation(format!(
                "{} subsets do not divide {} views",
                self.n_subsets, geom.n_angles
            )));
        }
        if let Some(v) = self.init_value {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(format!("OSEM init value must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub image: Image2D,
    /// Voxels seen by no detector bin; they keep their initial value.
    pub zero_sensitivity_voxels: usize,
}

pub fn osem_reconstruct(sino: &Sinogram, projector: &Projector, cfg: &ReconConfig) -> Result<Reconstruction> {
    let (w, h) = projector.image_dims();
    let geom = projector.geometry();
    cfg.validate(geom)?;
    let init = match cfg.init_value {
        Some(v) => v,
        None => {
            let per_view = sino.sum() / geom.n_angles as f64;
            let fov = fov_pixels(projector);
            if per_view > 0.0 && fov > 0 {
                per_view / fov as f64
            } else {
                1.0
            }
        }
    };
    osem_reconstruct_from(sino, projector, cfg, Image2D::filled(w, h, init))
}

fn fov_pixels(projector: &Projector) -> usize {
    let (w, h) = projector.image_dims();
    let mut sens = vec![0.0; w * h];
    let ones = vec![1.0; projector.geometry().n_angles * projector.geometry().n_bins];
    projector.back_angles(&ones, 0..projector.geometry().n_angles, &mut sens);
    sens.iter().filter(|&&s| s > 0.0).count()
}

/// OSEM from an explicit starting image (which must be nonnegative).
pub fn osem_reconstruct_from(
    sino: &Sinogram,
    projector: &Projector,
    cfg: &ReconConfig,
    init: Image2D,
) -> Result<Reconstruction> {
    let geom = projector.geometry();
    cfg.validate(geom)?;
    let (w, h) = projector.image_dims();
    if sino.n_angles() != geom.n_angles || sino.n_bins() != geom.n_bins {
        return Err(Error::validation("sinogram does not match the projector geometry"));
    }
    if init.width() != w || init.height() != h {
        return Err(Error::validation("initial image does not match the projector grid"));
    }
    if let Some(i) = sino.as_slice().iter().position(|v| !(*v >= 0.0)) {
        return Err(Error::validation(format!("negative or non-finite projection value at {i}")));
    }
    if init.as_slice().iter().any(|v| *v < 0.0) {
        return Err(Error::validation("initial image must be nonnegative"));
    }
    let n_pix = w * h;
    let nb = geom.n_bins;
    let subsets: Vec<Vec<usize>> =
        (0..cfg.n_subsets).map(|s| (s..geom.n_angles).step_by(cfg.n_subsets).collect()).collect();

    let ones = vec![1.0; geom.n_angles * nb];
    let sens: Vec<Vec<f64>> = subsets
        .iter()
        .map(|angles| {
            let mut s = vec![0.0; n_pix];
            projector.back_angles(&ones, angles.iter().copied(), &mut s);
            s
        })
        .collect();
    let zero_sensitivity_voxels = (0..n_pix).filter(|&p| sens.iter().all(|s| s[p] <= 0.0)).count();
    if zero_sensitivity_voxels > 0 {
        log::debug!("OSEM: {zero_sensitivity_voxels} voxels have zero sensitivity and keep their initial value");
    }

    let y = sino.as_slice();
    let mut f = init.into_vec();
    let mut est = vec![0.0; geom.n_angles * nb];
    let mut ratio = vec![0.0; geom.n_angles * nb];
    let mut corr = vec![0.0; n_pix];
    for _ in 0..cfg.n_iterations {
        for (angles, sens) in subsets.iter().zip(&sens) {
            projector.forward_angles(&f, angles.iter().copied(), &mut est);
            for &a in angles {
                for i in a * nb..(a + 1) * nb {
                    ratio[i] = if est[i] > 0.0 { y[i] / est[i] } else { 0.0 };
                }
            }
            corr.fill(0.0);
            projector.back_angles(&ratio, angles.iter().copied(), &mut corr);
            for p in 0..n_pix {
                if sens[p] > 0.0 {
                    f[p] *= corr[p] / sens[p];
                }
            }
        }
    }
    Ok(Reconstruction { image: Image2D::from_vec(w, h, f)?, zero_sensitivity_voxels })
}
