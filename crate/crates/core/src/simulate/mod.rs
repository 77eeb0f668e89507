//! Acquisition and reconstruction: 2-D parallel-beam projection per slice,
//! Poisson count generation, binomial dose thinning, OSEM and a Butterworth
//! post-filter.

mod counts;
mod filter;
mod osem;
mod projector;

pub use counts::{binomial_thin, poisson_counts};
pub use filter::{apply_radial_filter, butterworth_response, post_filter, post_filter_volume, FilterConfig};
pub use osem::{osem_reconstruct, osem_reconstruct_from, ReconConfig, Reconstruction};
pub use projector::{back_project, forward_project, Geometry, Projector};
