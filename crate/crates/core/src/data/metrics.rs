//! PSNR and SSIM on the luminance channel.

use super::color::luminance;
use super::degrade::gaussian_taps;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// PSNR reported for identical inputs.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// `10 log10(1 / MSE)` for signals in [0, 1], capped at [`PSNR_CAP_DB`].
pub fn psnr_plane(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape("psnr", format!("{} vs {} samples", a.len(), b.len())));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM over all fully contained Gaussian windows of an `h x w` plane.
pub fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> Result<f64> {
    if a.len() != h * w || b.len() != h * w {
        return Err(Error::shape("ssim", "plane length does not match extents"));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape("ssim", format!("{h}x{w} plane smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let (mu_a, oh, ow) = filter_valid(a, h, w, &taps);
    let (mu_b, _, _) = filter_valid(b, h, w, &taps);
    let (e_aa, _, _) = filter_valid(&prod(&|x, _| x * x), h, w, &taps);
    let (e_bb, _, _) = filter_valid(&prod(&|_, y| y * y), h, w, &taps);
    let (e_ab, _, _) = filter_valid(&prod(&|x, y| x * y), h, w, &taps);
    let mut total = 0.0;
    for i in 0..oh * ow {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
    }
    Ok(total / (oh * ow) as f64)
}

fn shaved_luma(img: &Tensor<f32>, shave: usize) -> Result<(Vec<f64>, usize, usize)> {
    let (y, h, w) = luminance(img)?;
    if 2 * shave >= h || 2 * shave >= w {
        return Err(Error::shape("shave", format!("shave {shave} consumes a {h}x{w} image")));
    }
    let (oh, ow) = (h - 2 * shave, w - 2 * shave);
    let mut out = Vec::with_capacity(oh * ow);
    for r in shave..h - shave {
        out.extend_from_slice(&y[r * w + shave..r * w + w - shave]);
    }
    Ok((out, oh, ow))
}

fn paired(a: &Tensor<f32>, b: &Tensor<f32>, shave: usize) -> Result<((Vec<f64>, Vec<f64>), usize, usize)> {
    if a.shape() != b.shape() {
        return Err(Error::shape("metric", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let (ya, h, w) = shaved_luma(a, shave)?;
    let (yb, _, _) = shaved_luma(b, shave)?;
    Ok(((ya, yb), h, w))
}

/// PSNR on studio-swing Y after removing `shave` border pixels.
pub fn psnr_y(a: &Tensor<f32>, b: &Tensor<f32>, shave: usize) -> Result<f64> {
    let ((ya, yb), _, _) = paired(a, b, shave)?;
    psnr_plane(&ya, &yb)
}

/// SSIM on studio-swing Y after removing `shave` border pixels.
pub fn ssim_y(a: &Tensor<f32>, b: &Tensor<f32>, shave: usize) -> Result<f64> {
    let ((ya, yb), h, w) = paired(a, b, shave)?;
    ssim_plane(&ya, &yb, h, w)
}
