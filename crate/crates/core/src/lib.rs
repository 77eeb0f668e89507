//! Building blocks for task-specific denoising of low-dose myocardial
//! perfusion SPECT and its evaluation with a channelized Hotelling observer.
//!
//! The crate is organised bottom-up:
//!
//! * [`image`], [`rng`], [`io`]: voxel containers, reproducible random
//!   streams and the raw on-disk format.
//! * [`phantom`]: short-axis left-ventricle phantoms and perfusion defects.
//! * [`simulate`]: parallel-beam projection, count noise, binomial dose
//!   thinning, OSEM and the Butterworth post-filter.
//! * [`channels`]: rotationally symmetric square frequency channels.
//! * [`observer`]: the channelized Hotelling observer with leave-one-out
//!   scoring.
//! * [`evalmetrics`]: AUC with bootstrap intervals, RMSE and SSIM.
//! * [`denoiser`]: the encoder-decoder network, its two-term loss, manual
//!   gradients and training loop.
//!
//! With the `parallel` feature (on by default) batch work is spread over a
//! rayon pool; every reduction is performed in a fixed order, so results are
//! bit-identical with and without the feature.

pub mod channels;
pub mod denoiser;
pub mod error;
pub mod evalmetrics;
pub mod image;
pub mod io;
pub mod observer;
pub mod par;
pub mod phantom;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
pub use image::{acyclic_shift, Image2D, Image3D, Shifted, Sinogram, SinogramKind};
pub use rng::RngStream;
