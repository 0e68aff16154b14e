//! Raster images, binary masks, saliency extraction, and
//! gradient-domain compositing.

mod poisson;
mod raster;
mod saliency;

pub use poisson::{poisson_blend, solve_blend_channel, PoissonSolveParams, RegionSystem};
pub use raster::{image_dims, load_image, load_mask, BinaryMask, RasterImage};
pub use saliency::{saliency_mask, SaliencyMask};
