//! RGB to YCbCr conversion.

use super::resize::image_dims;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// YCbCr quantization range.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum YCbCrRange {
    /// BT.601 studio swing: Y in [16, 235] / 255.
    #[default]
    Studio,
    /// Full-range BT.601 (JPEG convention).
    Full,
}

impl std::str::FromStr for YCbCrRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "studio" => Ok(YCbCrRange::Studio),
            "full" => Ok(YCbCrRange::Full),
            other => Err(Error::Config(format!("unknown YCbCr range '{other}'"))),
        }
    }
}

/// `[Y, Cb, Cr]` of one RGB triple in [0, 1].
pub fn ycbcr_pixel(r: f64, g: f64, b: f64, range: YCbCrRange) -> [f64; 3] {
    match range {
        YCbCrRange::Studio => [
            (65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0,
            (-37.797 * r - 74.203 * g + 112.0 * b + 128.0) / 255.0,
            (112.0 * r - 93.786 * g - 18.214 * b + 128.0) / 255.0,
        ],
        YCbCrRange::Full => [
            0.299 * r + 0.587 * g + 0.114 * b,
            -0.168_736 * r - 0.331_264 * g + 0.5 * b + 0.5,
            0.5 * r - 0.418_688 * g - 0.081_312 * b + 0.5,
        ],
    }
}

/// Converts a `3 x H x W` RGB image to YCbCr planes.
pub fn rgb_to_ycbcr(img: &Tensor<f32>, range: YCbCrRange) -> Result<Tensor<f32>> {
    let [c, h, w] = image_dims(img)?;
    if c != 3 {
        return Err(Error::shape("rgb_to_ycbcr", format!("{c} channels, expected 3")));
    }
    let plane = h * w;
    let d = img.data();
    let mut out = vec![0f32; 3 * plane];
    for i in 0..plane {
        let px = ycbcr_pixel(d[i] as f64, d[plane + i] as f64, d[2 * plane + i] as f64, range);
        for (k, v) in px.into_iter().enumerate() {
            out[k * plane + i] = v as f32;
        }
    }
    Tensor::from_vec(&[3, h, w], out)
}

/// Studio-swing luminance of an RGB image as an `H x W` plane in f64.
/// Single-channel input is taken as luminance already.
pub fn luminance(img: &Tensor<f32>) -> Result<(Vec<f64>, usize, usize)> {
    let [c, h, w] = image_dims(img)?;
    let d = img.data();
    let plane = h * w;
    let y = match c {
        1 => d.iter().map(|&v| v as f64).collect(),
        3 => (0..plane)
            .map(|i| ycbcr_pixel(d[i] as f64, d[plane + i] as f64, d[2 * plane + i] as f64, YCbCrRange::Studio)[0])
            .collect(),
        _ => return Err(Error::shape("luminance", format!("{c} channels"))),
    };
    Ok((y, h, w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_levels() {
        let y = |v: f64| ycbcr_pixel(v, v, v, YCbCrRange::Studio)[0] * 255.0;
        assert!((y(1.0) - 235.0).abs() < 1e-9);
        assert!((y(0.0) - 16.0).abs() < 1e-12);
        assert!((y(0.5) - 125.5).abs() < 1e-9);
        let full = ycbcr_pixel(1.0, 1.0, 1.0, YCbCrRange::Full);
        assert!((full[0] - 1.0).abs() < 1e-9 && (full[1] - 0.5).abs() < 1e-6);
    }
}
