//! Separable bicubic resampling with antialiased downscaling.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Keys cubic convolution kernel with `a = -0.5`.
pub fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    let ax2 = ax * ax;
    let ax3 = ax2 * ax;
    if ax <= 1.0 {
        1.5 * ax3 - 2.5 * ax2 + 1.0
    } else if ax <= 2.0 {
        -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    } else {
        0.0
    }
}

/// Per-output-sample taps along one axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Contributions {
    /// Normalized weights, one row per output sample.
    pub weights: Vec<Vec<f64>>,
    /// Clamped source indices matching `weights`.
    pub indices: Vec<Vec<usize>>,
}

/// Taps mapping `in_len` samples to `out_len` under `scale = out / in`.
/// Downscaling stretches the kernel by `1 / scale`; out-of-range taps
/// replicate the edge sample.
pub fn contributions(in_len: usize, out_len: usize, scale: f64) -> Contributions {
    let (stretch, width) = if scale < 1.0 { (scale, 4.0 / scale) } else { (1.0, 4.0) };
    let taps = width.ceil() as usize + 2;
    let mut weights = Vec::with_capacity(out_len);
    let mut indices = Vec::with_capacity(out_len);
    for x in 1..=out_len {
        // Output centre in 1-based input coordinates.
        let u = x as f64 / scale + 0.5 * (1.0 - 1.0 / scale);
        let left = (u - width / 2.0).floor() as i64;
        let mut w = Vec::with_capacity(taps);
        let mut idx = Vec::with_capacity(taps);
        for k in 0..taps as i64 {
            let j = left + k;
            w.push(stretch * cubic(stretch * (u - j as f64)));
            idx.push((j - 1).clamp(0, in_len as i64 - 1) as usize);
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        weights.push(w);
        indices.push(idx);
    }
    Contributions { weights, indices }
}

/// Output extent `ceil(len * factor)`.
pub fn scaled_len(len: usize, factor: f64) -> usize {
    // Guard against 0.5 * 48 style products landing a hair above an integer.
    let exact = len as f64 * factor;
    let r = exact.round();
    if (exact - r).abs() < 1e-9 {
        r as usize
    } else {
        exact.ceil() as usize
    }
}

fn resize_axis(src: &[f64], planes: usize, h: usize, w: usize, along_h: bool, c: &Contributions) -> (Vec<f64>, usize, usize) {
    let out_len = c.weights.len();
    let (oh, ow) = if along_h { (out_len, w) } else { (h, out_len) };
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let s = &src[p * h * w..(p + 1) * h * w];
        let d = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                let o = if along_h { y } else { x };
                let mut acc = 0.0;
                for (&wt, &i) in c.weights[o].iter().zip(&c.indices[o]) {
                    acc += wt * if along_h { s[i * w + x] } else { s[y * w + i] };
                }
                d[y * ow + x] = acc;
            }
        }
    }
    (out, oh, ow)
}

/// Resizes a `C x H x W` image to `out_h x out_w` with per-axis scale
/// `out / in`.
pub fn bicubic_resize_to(img: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let [_, h, w] = image_dims(img)?;
    resample(img, out_h, out_w, out_h as f64 / h as f64, out_w as f64 / w as f64)
}

/// Resizes by `factor` on both axes; output extents are `ceil(in * factor)`.
pub fn bicubic_resize(img: &Tensor<f32>, factor: f64) -> Result<Tensor<f32>> {
    let [_, h, w] = image_dims(img)?;
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::Config(format!("resize factor {factor} must be positive")));
    }
    resample(img, scaled_len(h, factor), scaled_len(w, factor), factor, factor)
}

/// The axis with the smaller scale is processed first.
fn resample(img: &Tensor<f32>, out_h: usize, out_w: usize, sh: f64, sw: f64) -> Result<Tensor<f32>> {
    let [c, h, w] = image_dims(img)?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("bicubic_resize", format!("degenerate output {out_h}x{out_w}")));
    }
    let mut buf: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
    let (mut ch, mut cw) = (h, w);
    let mut order = [(true, sh, out_h), (false, sw, out_w)];
    if sw < sh {
        order.swap(0, 1);
    }
    for (along_h, scale, out_len) in order {
        let in_len = if along_h { ch } else { cw };
        let contrib = contributions(in_len, out_len, scale);
        (buf, ch, cw) = resize_axis(&buf, c, ch, cw, along_h, &contrib);
    }
    Tensor::from_vec(&[c, out_h, out_w], buf.into_iter().map(|v| v as f32).collect())
}

pub(crate) fn image_dims(img: &Tensor<f32>) -> Result<[usize; 3]> {
    match *img.shape() {
        [c, h, w] => Ok([c, h, w]),
        _ => Err(Error::shape("image", format!("expected C x H x W, got {:?}", img.shape()))),
    }
}
