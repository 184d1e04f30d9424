//! Degradation, sampling, color conversion and quality metrics.
//!
//! Images are `3 x H x W` tensors with values in [0, 1].

mod augment;
mod color;
mod dataset;
mod degrade;
mod image_io;
mod metrics;
mod resize;

pub use augment::Dihedral;
pub use color::{luminance, rgb_to_ycbcr, ycbcr_pixel, YCbCrRange};
pub use dataset::{
    bicubic_dataset, list_pngs, parse_manifest, read_manifest, sample_batch, sample_batch_with, Dataset, ImagePair,
    ManifestEntry, PatchOrigin, SampleBatch,
};
pub use degrade::{degrade, gaussian_blur, gaussian_taps, DegradationKind, DegradationSpec};
pub use image_io::{crop, load_png, modcrop, quantize, save_png};
pub use metrics::{psnr_plane, psnr_y, ssim_plane, ssim_y, PSNR_CAP_DB, SSIM_SIGMA, SSIM_WINDOW};
pub use resize::{bicubic_resize, bicubic_resize_to, contributions, cubic, scaled_len, Contributions};
