//! Synthetic low-resolution inputs: bicubic (BI), blur then downscale (BD),
//! downscale then noise (DN).

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::resize::{bicubic_resize, image_dims};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DegradationKind {
    Bi,
    Bd,
    Dn,
}

impl DegradationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DegradationKind::Bi => "bi",
            DegradationKind::Bd => "bd",
            DegradationKind::Dn => "dn",
        }
    }
}

impl fmt::Display for DegradationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DegradationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bi" => Ok(DegradationKind::Bi),
            "bd" => Ok(DegradationKind::Bd),
            "dn" => Ok(DegradationKind::Dn),
            other => Err(Error::Config(format!("unknown degradation '{other}' (bi, bd, dn)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DegradationSpec {
    pub kind: DegradationKind,
    pub scale: usize,
    /// Odd blur kernel extent (BD).
    pub blur_size: usize,
    pub blur_sigma: f64,
    /// Noise standard deviation in 8-bit units (DN).
    pub noise_sigma: f64,
    pub seed: u64,
}

impl DegradationSpec {
    pub fn new(kind: DegradationKind, scale: usize) -> Self {
        DegradationSpec {
            kind,
            scale,
            blur_size: 7,
            blur_sigma: 1.6,
            noise_sigma: 30.0,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale == 0 {
            return Err(Error::Config("degradation scale must be positive".into()));
        }
        if self.blur_size % 2 == 0 || self.blur_sigma <= 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::Config("blur size must be odd, blur sigma > 0, noise sigma >= 0".into()));
        }
        Ok(())
    }
}

/// Normalized 1-D Gaussian taps of odd length `size`.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let x = i as f64 - r;
            (-(x * x) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur(img: &Tensor<f32>, size: usize, sigma: f64) -> Result<Tensor<f32>> {
    let [c, h, w] = image_dims(img)?;
    let taps = gaussian_taps(size, sigma);
    let r = (size / 2) as i64;
    let src: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
    let mut tmp = vec![0.0; src.len()];
    let mut out = vec![0f32; src.len()];
    let at = |i: i64, n: usize| i.clamp(0, n as i64 - 1) as usize;
    for p in 0..c {
        let base = p * h * w;
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, t) in taps.iter().enumerate() {
                    acc += t * src[base + y * w + at(x as i64 + k as i64 - r, w)];
                }
                tmp[base + y * w + x] = acc;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, t) in taps.iter().enumerate() {
                    acc += t * tmp[base + at(y as i64 + k as i64 - r, h) * w + x];
                }
                out[base + y * w + x] = acc as f32;
            }
        }
    }
    Tensor::from_vec(&[c, h, w], out)
}

/// Applies the degradation recipe to an HR image in [0, 1].
pub fn degrade(img: &Tensor<f32>, spec: &DegradationSpec) -> Result<Tensor<f32>> {
    spec.validate()?;
    let factor = 1.0 / spec.scale as f64;
    match spec.kind {
        DegradationKind::Bi => bicubic_resize(img, factor),
        DegradationKind::Bd => bicubic_resize(&gaussian_blur(img, spec.blur_size, spec.blur_sigma)?, factor),
        DegradationKind::Dn => {
            let mut lr = bicubic_resize(img, factor)?;
            let normal = Normal::new(0.0, spec.noise_sigma / 255.0)
                .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            for v in lr.data_mut() {
                let noisy: f64 = *v as f64 + normal.sample(&mut rng);
                *v = noisy.clamp(0.0, 1.0) as f32;
            }
            Ok(lr)
        }
    }
}
