//! In-memory LR/HR pairs, manifests, and random patch batches.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use super::augment::Dihedral;
use super::degrade::{degrade, DegradationKind, DegradationSpec};
use super::image_io::{crop, load_png, modcrop};
use super::resize::image_dims;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub hr: PathBuf,
    pub lr: Option<PathBuf>,
}

/// Parses `hr_path<TAB>lr_path` records. The LR column is optional; relative
/// paths resolve against `base`. Blank lines and `#` comments are skipped.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let mut cols = line.split('\t').map(str::trim);
        let hr = cols.next().filter(|s| !s.is_empty());
        let lr = cols.next().filter(|s| !s.is_empty());
        if cols.next().is_some() || hr.is_none() {
            return Err(Error::Config(format!("manifest line {}: expected 'hr<TAB>lr'", n + 1)));
        }
        entries.push(ManifestEntry {
            hr: base.join(hr.unwrap()),
            lr: lr.map(|p| base.join(p)),
        });
    }
    Ok(entries)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&fs::read_to_string(path)?, base)
}

/// PNG files of a directory, sorted by name.
pub fn list_pngs(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub name: String,
    /// HR cropped to a multiple of the scale.
    pub hr: Tensor<f32>,
    pub lr: Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub scale: usize,
    pub pairs: Vec<ImagePair>,
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

impl Dataset {
    /// Checks that every LR image is the HR image reduced by `scale`.
    pub fn from_pairs(scale: usize, pairs: Vec<ImagePair>) -> Result<Self> {
        for p in &pairs {
            let [_, h, w] = image_dims(&p.hr)?;
            let [_, lh, lw] = image_dims(&p.lr)?;
            if lh * scale != h || lw * scale != w {
                return Err(Error::shape(
                    "dataset",
                    format!("{}: HR {h}x{w} and LR {lh}x{lw} disagree at scale {scale}", p.name),
                ));
            }
        }
        Ok(Dataset { scale, pairs })
    }

    /// Synthesizes LR images from HR images. DN noise for image `i` is
    /// seeded with `spec.seed + i`.
    pub fn from_hr(images: Vec<(String, Tensor<f32>)>, spec: &DegradationSpec) -> Result<Self> {
        let pairs = images
            .into_iter()
            .enumerate()
            .map(|(i, (name, hr))| {
                let hr = modcrop(&hr, spec.scale)?;
                let lr = degrade(&hr, &spec.clone().with_seed(spec.seed.wrapping_add(i as u64)))?;
                Ok(ImagePair { name, hr, lr })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::from_pairs(spec.scale, pairs)
    }

    pub fn from_manifest(path: impl AsRef<Path>, spec: &DegradationSpec) -> Result<Self> {
        let entries = read_manifest(path.as_ref())?;
        if entries.is_empty() {
            return Err(Error::EmptyDataset(path.as_ref().display().to_string()));
        }
        let mut pairs = Vec::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            let hr = modcrop(&load_png(&e.hr)?, spec.scale)?;
            let lr = match &e.lr {
                Some(p) => load_png(p)?,
                None => degrade(&hr, &spec.clone().with_seed(spec.seed.wrapping_add(i as u64)))?,
            };
            pairs.push(ImagePair { name: stem(&e.hr), hr, lr });
        }
        Dataset::from_pairs(spec.scale, pairs)
    }

    /// Every PNG in `dir` as an HR image.
    pub fn from_dir(dir: impl AsRef<Path>, spec: &DegradationSpec) -> Result<Self> {
        let files = list_pngs(dir.as_ref())?;
        if files.is_empty() {
            return Err(Error::EmptyDataset(dir.as_ref().display().to_string()));
        }
        let images = files
            .iter()
            .map(|p| Ok((stem(p), load_png(p)?)))
            .collect::<Result<Vec<_>>>()?;
        Dataset::from_hr(images, spec)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Convenience for the common bicubic case.
pub fn bicubic_dataset(images: Vec<(String, Tensor<f32>)>, scale: usize) -> Result<Dataset> {
    Dataset::from_hr(images, &DegradationSpec::new(DegradationKind::Bi, scale))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchOrigin {
    pub image: usize,
    /// Top-left corner in LR pixels.
    pub lr_y: usize,
    pub lr_x: usize,
    pub augment: Dihedral,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    /// `B x 3 x p x p`.
    pub lr: Tensor<f32>,
    /// `B x 3 x ps x ps`.
    pub hr: Tensor<f32>,
    pub origins: Vec<PatchOrigin>,
    /// Images too small for a patch, left out of sampling.
    pub skipped: Vec<String>,
}

/// Draws `batch` aligned LR/HR patch pairs. Each item picks an image, an LR
/// corner and one of the eight dihedral transforms uniformly.
pub fn sample_batch<R: Rng + ?Sized>(data: &Dataset, batch: usize, patch: usize, rng: &mut R) -> Result<SampleBatch> {
    sample_batch_with(data, batch, patch, true, rng)
}

/// [`sample_batch`] with augmentation optional; without it every patch keeps
/// its original orientation.
pub fn sample_batch_with<R: Rng + ?Sized>(
    data: &Dataset,
    batch: usize,
    patch: usize,
    augment: bool,
    rng: &mut R,
) -> Result<SampleBatch> {
    let s = data.scale;
    let mut eligible = Vec::new();
    let mut skipped = Vec::new();
    for (i, p) in data.pairs.iter().enumerate() {
        let [_, lh, lw] = image_dims(&p.lr)?;
        if lh >= patch && lw >= patch {
            eligible.push(i);
        } else {
            log::warn!("{}", Error::ImageTooSmall { path: p.name.clone().into(), needed: patch * s });
            skipped.push(p.name.clone());
        }
    }
    if eligible.is_empty() || batch == 0 || patch == 0 {
        return Err(Error::EmptyDataset(format!(
            "no image holds a {0}x{0} LR patch ({1} skipped)",
            patch,
            skipped.len()
        )));
    }
    let mut lr = Vec::with_capacity(batch * 3 * patch * patch);
    let mut hr = Vec::with_capacity(batch * 3 * patch * patch * s * s);
    let mut origins = Vec::with_capacity(batch);
    for _ in 0..batch {
        let image = eligible[rng.random_range(0..eligible.len())];
        let pair = &data.pairs[image];
        let [_, lh, lw] = image_dims(&pair.lr)?;
        let lr_y = rng.random_range(0..=lh - patch);
        let lr_x = rng.random_range(0..=lw - patch);
        let augment = if augment {
            Dihedral::new(rng.random_range(0..8))
        } else {
            Dihedral::IDENTITY
        };
        let lp = augment.apply(&crop(&pair.lr, lr_y, lr_x, patch, patch)?)?;
        let hp = augment.apply(&crop(&pair.hr, lr_y * s, lr_x * s, patch * s, patch * s)?)?;
        lr.extend_from_slice(lp.data());
        hr.extend_from_slice(hp.data());
        origins.push(PatchOrigin { image, lr_y, lr_x, augment });
    }
    Ok(SampleBatch {
        lr: Tensor::from_vec(&[batch, 3, patch, patch], lr)?,
        hr: Tensor::from_vec(&[batch, 3, patch * s, patch * s], hr)?,
        origins,
        skipped,
    })
}
