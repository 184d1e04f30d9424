//! Benchmark evaluation on the luminance channel.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::arch::ModelGraph;
use crate::data::{bicubic_resize_to, psnr_y, quantize, ssim_y, Dataset, ImagePair};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How SR images are produced from LR inputs.
#[derive(Clone, Copy)]
pub enum Upscaler<'a> {
    Model(&'a ModelGraph),
    /// Bicubic interpolation to the HR extent.
    Bicubic,
    /// Returns the ground truth; a check of the metric plumbing.
    Oracle,
}

impl Upscaler<'_> {
    pub fn upscale(&self, pair: &ImagePair) -> Result<Tensor<f32>> {
        let (h, w) = (pair.hr.shape()[1], pair.hr.shape()[2]);
        match self {
            Upscaler::Model(m) => m.forward(&pair.lr),
            Upscaler::Bicubic => bicubic_resize_to(&pair.lr, h, w),
            Upscaler::Oracle => Ok(pair.hr.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageScore {
    pub image: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ImageScore>,
    /// Bicubic scores on the same inputs, row-aligned with `rows`.
    pub baseline: Vec<ImageScore>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

impl EvalReport {
    pub fn mean_psnr(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.psnr_db))
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.ssim))
    }

    pub fn baseline_mean_psnr(&self) -> f64 {
        mean(self.baseline.iter().map(|r| r.psnr_db))
    }

    pub fn baseline_mean_ssim(&self) -> f64 {
        mean(self.baseline.iter().map(|r| r.ssim))
    }

    /// `image,psnr_db,ssim` rows followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image,psnr_db,ssim\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{:.6},{:.6}", r.image, r.psnr_db, r.ssim);
        }
        let _ = writeln!(out, "mean,{:.6},{:.6}", self.mean_psnr(), self.mean_ssim());
        out
    }
}

/// Scores one SR output against its HR image. SR is clamped and rounded to
/// 8 bits before measuring.
pub fn score(name: &str, sr: &Tensor<f32>, hr: &Tensor<f32>, shave: usize) -> Result<ImageScore> {
    if sr.shape() != hr.shape() {
        return Err(Error::shape(
            "evaluate",
            format!("{name}: SR {:?} vs HR {:?}", sr.shape(), hr.shape()),
        ));
    }
    let sr = quantize(sr);
    Ok(ImageScore {
        image: name.to_string(),
        psnr_db: psnr_y(&sr, hr, shave)?,
        ssim: ssim_y(&sr, hr, shave)?,
    })
}

/// Evaluates `upscaler` on every pair, with LR inputs rounded to 8 bits as
/// if read from disk. Images are processed in parallel; rows keep dataset
/// order.
pub fn evaluate(upscaler: Upscaler<'_>, data: &Dataset, shave: usize) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("benchmark has no images".into()));
    }
    if let Upscaler::Model(m) = upscaler {
        if m.config.scale != data.scale {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint scale {} vs benchmark scale {}",
                m.config.scale, data.scale
            )));
        }
    }
    let scored: Vec<(ImageScore, ImageScore)> = data
        .pairs
        .par_iter()
        .map(|pair| {
            let pair = ImagePair {
                name: pair.name.clone(),
                hr: quantize(&pair.hr),
                lr: quantize(&pair.lr),
            };
            let sr = upscaler.upscale(&pair)?;
            let base = Upscaler::Bicubic.upscale(&pair)?;
            Ok((score(&pair.name, &sr, &pair.hr, shave)?, score(&pair.name, &base, &pair.hr, shave)?))
        })
        .collect::<Result<_>>()?;
    let (rows, baseline) = scored.into_iter().unzip();
    Ok(EvalReport { rows, baseline })
}
