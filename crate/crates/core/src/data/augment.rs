//! The eight rotations and reflections of a square patch.

use super::resize::image_dims;
use crate::error::Result;
use crate::tensor::Tensor;

/// `k % 4` clockwise quarter turns, followed by a horizontal flip when
/// `k >= 4`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dihedral(u8);

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral(0);

    pub fn new(k: u8) -> Self {
        assert!(k < 8, "dihedral index {k} out of range");
        Dihedral(k)
    }

    pub fn all() -> impl Iterator<Item = Dihedral> {
        (0..8).map(Dihedral)
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn quarter_turns(self) -> u8 {
        self.0 % 4
    }

    pub fn flipped(self) -> bool {
        self.0 >= 4
    }

    /// Reflections are involutions; rotations invert by turning back.
    pub fn inverse(self) -> Dihedral {
        if self.flipped() {
            self
        } else {
            Dihedral((4 - self.0) % 4)
        }
    }

    /// Applies the transform to each channel of a `C x H x W` image.
    pub fn apply(self, img: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut out = img.clone();
        for _ in 0..self.quarter_turns() {
            out = rotate_cw(&out)?;
        }
        if self.flipped() {
            out = flip_h(&out)?;
        }
        Ok(out)
    }
}

fn rotate_cw(img: &Tensor<f32>) -> Result<Tensor<f32>> {
    let [c, h, w] = image_dims(img)?;
    let d = img.data();
    let mut out = vec![0f32; d.len()];
    // Output is w x h; out[y][x] = in[h - 1 - x][y].
    for p in 0..c {
        for y in 0..w {
            for x in 0..h {
                out[p * h * w + y * h + x] = d[p * h * w + (h - 1 - x) * w + y];
            }
        }
    }
    Tensor::from_vec(&[c, w, h], out)
}

fn flip_h(img: &Tensor<f32>) -> Result<Tensor<f32>> {
    let [c, h, w] = image_dims(img)?;
    let d = img.data();
    let mut out = Vec::with_capacity(d.len());
    for row in 0..c * h {
        out.extend(d[row * w..(row + 1) * w].iter().rev());
    }
    Tensor::from_vec(&[c, h, w], out)
}
