//! PNG I/O and 8-bit helpers.

use std::path::Path;

use image::{ImageBuffer, Rgb};

use super::resize::image_dims;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Loads any PNG as a `3 x H x W` RGB tensor in [0, 1].
pub fn load_png(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let rgb = image::open(path.as_ref())?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let plane = w * h;
    let mut data = vec![0f32; 3 * plane];
    for (i, px) in rgb.pixels().enumerate() {
        for k in 0..3 {
            data[k * plane + i] = px.0[k] as f32 / 255.0;
        }
    }
    Tensor::from_vec(&[3, h, w], data)
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a `3 x H x W` image, clamping to [0, 1] and rounding to 8 bits.
pub fn save_png(img: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    let [c, h, w] = image_dims(img)?;
    if c != 3 {
        return Err(Error::shape("save_png", format!("{c} channels, expected 3")));
    }
    let d = img.data();
    let plane = h * w;
    let buf = ImageBuffer::<Rgb<u8>, _>::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        Rgb([to_u8(d[i]), to_u8(d[plane + i]), to_u8(d[2 * plane + i])])
    });
    buf.save_with_format(path.as_ref(), image::ImageFormat::Png)?;
    Ok(())
}

/// Rounds every value to the nearest of the 256 8-bit levels.
pub fn quantize(img: &Tensor<f32>) -> Tensor<f32> {
    img.map(|v| to_u8(v) as f32 / 255.0)
}

/// Crops bottom/right so both extents are multiples of `scale`.
pub fn modcrop(img: &Tensor<f32>, scale: usize) -> Result<Tensor<f32>> {
    let [_, h, w] = image_dims(img)?;
    if scale == 0 || h < scale || w < scale {
        return Err(Error::shape("modcrop", format!("{h}x{w} image, scale {scale}")));
    }
    crop(img, 0, 0, h - h % scale, w - w % scale)
}

/// Copies the window `[top, top + h) x [left, left + w)`.
pub fn crop(img: &Tensor<f32>, top: usize, left: usize, h: usize, w: usize) -> Result<Tensor<f32>> {
    let [c, ih, iw] = image_dims(img)?;
    if h == 0 || w == 0 || top + h > ih || left + w > iw {
        return Err(Error::shape("crop", format!("window {h}x{w} at ({top},{left}) outside {ih}x{iw}")));
    }
    let d = img.data();
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in top..top + h {
            let row = ch * ih * iw + y * iw;
            out.extend_from_slice(&d[row + left..row + left + w]);
        }
    }
    Tensor::from_vec(&[c, h, w], out)
}
