//! Synthetic scenes, Wald-protocol sample pairs, patching and persistence.

pub mod container;
pub mod filter;
pub mod imaging;
mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use container::Container;
pub use filter::{interior_range, wald_degrade_image, wald_sigma};
pub use synth::{generate_synthetic_scene, pan_weights, Recipe, Scene, PAN_DETAIL};

use crate::dct::{make_mask_label, LowFrequencyRegion, MaskLabel, MaskParams};
use crate::error::{FameError, Result};
use crate::tensor::Tensor;

/// File extension of stored pairs.
pub const PAIR_EXTENSION: &str = "fame";

/// Where a pair was cut from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    Scene,
    /// Top-left corner of the patch in low-resolution pixels.
    Patch { row: usize, col: usize },
}

/// Aligned training sample: `lrms` is the degradation of `gt`.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub lrms: Tensor<f32>,
    pub pan: Tensor<f32>,
    pub gt: Tensor<f32>,
    pub mask_label: MaskLabel,
    pub mask_params: MaskParams,
    pub factor: usize,
    pub seed: u64,
    pub recipe: Recipe,
    pub origin: Origin,
}

/// Seeds of `count` scenes derived from one base seed.
pub fn scene_seeds(base: u64, count: usize) -> Vec<u64> {
    use rand::RngCore;
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    (0..count).map(|_| rng.next_u64()).collect()
}

/// Blur, decimate and label a scene.
pub fn wald_degrade(scene: &Scene, factor: usize, mask_params: &MaskParams) -> Result<SamplePair> {
    let lrms = wald_degrade_image(&scene.hrms, factor)?;
    let mask_label = make_mask_label(&scene.hrms, mask_params)?;
    Ok(SamplePair {
        lrms,
        pan: scene.pan.clone(),
        gt: scene.hrms.clone(),
        mask_label,
        mask_params: *mask_params,
        factor,
        seed: scene.seed,
        recipe: scene.recipe,
        origin: Origin::Scene,
    })
}

/// Aligned crops on a regular grid of `lrms_patch`-sized low-resolution
/// windows; the high-resolution windows are `factor` times larger.
pub fn extract_patches(pair: &SamplePair, lrms_patch: usize, stride: usize) -> Result<Vec<SamplePair>> {
    let ls = pair.lrms.shape();
    if lrms_patch == 0 || stride == 0 || lrms_patch > ls.h || lrms_patch > ls.w {
        return Err(FameError::Contract(format!(
            "patch {lrms_patch} with stride {stride} does not fit lrms {}x{}",
            ls.h, ls.w
        )));
    }
    let f = pair.factor;
    let (base_r, base_c) = match pair.origin {
        Origin::Scene => (0, 0),
        Origin::Patch { row, col } => (row, col),
    };
    let mut out = Vec::new();
    for r in (0..=ls.h - lrms_patch).step_by(stride) {
        for c in (0..=ls.w - lrms_patch).step_by(stride) {
            let hp = lrms_patch * f;
            out.push(SamplePair {
                lrms: pair.lrms.crop(r, c, lrms_patch, lrms_patch)?,
                pan: pair.pan.crop(r * f, c * f, hp, hp)?,
                gt: pair.gt.crop(r * f, c * f, hp, hp)?,
                mask_label: pair.mask_label.crop(r * f, c * f, hp, hp)?,
                mask_params: pair.mask_params,
                factor: f,
                seed: pair.seed,
                recipe: pair.recipe,
                origin: Origin::Patch { row: base_r + r, col: base_c + c },
            });
        }
    }
    Ok(out)
}

impl SamplePair {
    /// Re-degrades `gt` and compares with the stored `lrms`: every pixel for
    /// whole scenes, only pixels whose blur footprint lies inside the patch
    /// for patches.
    pub fn verify_degradation(&self) -> Result<()> {
        let again = wald_degrade_image(&self.gt, self.factor)?;
        let s = self.lrms.shape();
        if again.shape() != s {
            return Err(FameError::shape("verify_degradation", format!("lrms {s} vs regenerated {}", again.shape())));
        }
        let (rows, cols) = match self.origin {
            Origin::Scene => (0..s.h, 0..s.w),
            Origin::Patch { .. } => (interior_range(s.h, self.factor), interior_range(s.w, self.factor)),
        };
        for c in 0..s.c {
            for y in rows.clone() {
                for x in cols.clone() {
                    let (a, b) = (self.lrms.at(0, c, y, x), again.at(0, c, y, x));
                    if a.to_bits() != b.to_bits() {
                        return Err(FameError::Contract(format!(
                            "lrms is not the degradation of gt at band {c}, ({y}, {x}): {a} vs {b}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_container(&self) -> Container {
        let g = self.gt.shape();
        let (kind, row, col) = match self.origin {
            Origin::Scene => ("scene", 0, 0),
            Origin::Patch { row, col } => ("patch", row, col),
        };
        let region = match self.mask_params.region {
            LowFrequencyRegion::Triangle => "triangle",
            LowFrequencyRegion::Square => "square",
        };
        let meta = [
            ("kind", kind.to_string()),
            ("row", row.to_string()),
            ("col", col.to_string()),
            ("seed", self.seed.to_string()),
            ("recipe", self.recipe.to_string()),
            ("factor", self.factor.to_string()),
            ("blur_sigma", format!("{:?}", wald_sigma(self.factor))),
            ("blur_width", (2 * self.factor + 1).to_string()),
            ("mask_radius_fraction", format!("{:?}", self.mask_params.low_freq_radius_fraction)),
            ("mask_quantile", format!("{:?}", self.mask_params.magnitude_quantile)),
            ("mask_min_response", format!("{:?}", self.mask_params.min_response)),
            ("mask_region", region.to_string()),
        ];
        Container {
            bands: g.c as u16,
            height: g.h as u32,
            width: g.w as u32,
            arrays: vec![
                ("lrms".into(), self.lrms.clone()),
                ("pan".into(), self.pan.clone()),
                ("gt".into(), self.gt.clone()),
                ("mask".into(), self.mask_label.to_tensor()),
            ],
            metadata: meta.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let region = match c.meta("mask_region") {
            Some("triangle") => LowFrequencyRegion::Triangle,
            Some("square") => LowFrequencyRegion::Square,
            other => return Err(FameError::Contract(format!("unknown mask region {other:?}"))),
        };
        let mask_params = MaskParams {
            low_freq_radius_fraction: c.meta_parsed("mask_radius_fraction")?,
            magnitude_quantile: c.meta_parsed("mask_quantile")?,
            min_response: c.meta_parsed("mask_min_response")?,
            region,
        };
        let origin = match c.meta("kind") {
            Some("scene") => Origin::Scene,
            Some("patch") => Origin::Patch { row: c.meta_parsed("row")?, col: c.meta_parsed("col")? },
            other => return Err(FameError::Contract(format!("unknown pair kind {other:?}"))),
        };
        let pair = SamplePair {
            lrms: c.array("lrms")?.clone(),
            pan: c.array("pan")?.clone(),
            gt: c.array("gt")?.clone(),
            mask_label: MaskLabel::from_tensor(c.array("mask")?, &mask_params)?,
            mask_params,
            factor: c.meta_parsed("factor")?,
            seed: c.meta_parsed("seed")?,
            recipe: c.meta_parsed("recipe")?,
            origin,
        };
        let (g, p) = (pair.gt.shape(), pair.pan.shape());
        if (p.n, p.c, p.h, p.w) != (1, 1, g.h, g.w) || (g.c, g.h, g.w) != (c.bands as usize, c.height as usize, c.width as usize) {
            return Err(FameError::shape("load_pair", format!("gt {g}, pan {p} disagree with header")));
        }
        pair.verify_degradation()?;
        Ok(pair)
    }
}

pub fn save_pair(pair: &SamplePair, path: &Path) -> Result<()> {
    pair.to_container().write(path)
}

/// Reads a pair and checks that its `lrms` regenerates from `gt`.
pub fn load_pair(path: &Path) -> Result<SamplePair> {
    SamplePair::from_container(&Container::read(path)?)
}

/// Sorted paths of every stored pair in `dir`.
pub fn list_pairs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| FameError::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| FameError::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == PAIR_EXTENSION) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

/// Pairs of `dir` in an order shuffled deterministically by `shuffle_seed`.
pub fn iterate(dir: &Path, shuffle_seed: u64) -> Result<impl Iterator<Item = Result<SamplePair>>> {
    let mut paths = list_pairs(dir)?;
    paths.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
    Ok(paths.into_iter().map(|p| load_pair(&p)))
}
