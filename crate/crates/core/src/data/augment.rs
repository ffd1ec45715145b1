//! Random cropping, road-density filtering and dihedral augmentation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::types::{RgbTile, RoadMask, SampleRecord};
use crate::error::{Error, Result};

/// Road-pixel threshold for full-size 512 x 512 crops.
pub const FULL_SIZE_MIN_ROAD_PIXELS: usize = 4_000;
pub const FULL_SIZE_CROP: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationConfig {
    #[serde(default = "default_crops")]
    pub crops_per_image: usize,
    #[serde(default = "default_crop_size")]
    pub crop_size: usize,
    /// Defaults to the full-size threshold rescaled to `crop_size`.
    #[serde(default)]
    pub min_road_pixels: Option<usize>,
    #[serde(default = "default_true")]
    pub do_eightfold: bool,
}

fn default_crops() -> usize {
    20
}
fn default_crop_size() -> usize {
    FULL_SIZE_CROP
}
fn default_true() -> bool {
    true
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self { crops_per_image: 20, crop_size: FULL_SIZE_CROP, min_road_pixels: None, do_eightfold: true }
    }
}

impl AugmentationConfig {
    pub fn desk() -> Self {
        Self { crop_size: 64, ..Self::default() }
    }

    /// `crop_size^2 * 4000 / 512^2`, rounded down.
    pub fn scaled_min_road_pixels(crop_size: usize) -> usize {
        crop_size * crop_size * FULL_SIZE_MIN_ROAD_PIXELS / (FULL_SIZE_CROP * FULL_SIZE_CROP)
    }

    pub fn effective_min_road_pixels(&self) -> usize {
        self.min_road_pixels.unwrap_or_else(|| Self::scaled_min_road_pixels(self.crop_size))
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop_size == 0 || self.crops_per_image == 0 {
            return Err(Error::Config("crop_size and crops_per_image must be positive".into()));
        }
        if self.effective_min_road_pixels() >= self.crop_size * self.crop_size {
            return Err(Error::Config(format!(
                "min_road_pixels {} must be below the crop area {}",
                self.effective_min_road_pixels(),
                self.crop_size * self.crop_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CropPatch {
    pub top: usize,
    pub left: usize,
    pub tile: RgbTile,
    pub mask: RoadMask,
}

/// Draws `crops_per_image` square windows with top-left corners uniform over
/// the valid positions, with replacement.
pub fn crop_patches(
    image: &RgbTile,
    mask: &RoadMask,
    cfg: &AugmentationConfig,
    rng_seed: u64,
) -> Result<Vec<CropPatch>> {
    cfg.validate()?;
    if (mask.height(), mask.width()) != (image.height(), image.width()) {
        return Err(Error::shape("mask and image sizes differ"));
    }
    let size = cfg.crop_size;
    if image.height() < size {
        return Err(Error::invalid(format!("image height {} is smaller than crop size {size}", image.height())));
    }
    if image.width() < size {
        return Err(Error::invalid(format!("image width {} is smaller than crop size {size}", image.width())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let patches = (0..cfg.crops_per_image)
        .map(|_| {
            let top = rng.gen_range(0..=image.height() - size);
            let left = rng.gen_range(0..=image.width() - size);
            CropPatch { top, left, tile: image.crop(top, left, size, size), mask: mask.crop(top, left, size, size) }
        })
        .collect();
    Ok(patches)
}

/// Keeps pairs with at least `min_road_pixels` road pixels, in order.
pub fn filter_by_road_pixels<T>(pairs: Vec<(T, RoadMask)>, min_road_pixels: usize) -> Vec<(T, RoadMask)> {
    pairs.into_iter().filter(|(_, m)| m.road_pixels() >= min_road_pixels).collect()
}

/// Maps output coordinate `(r, c)` of a dihedral transform back to its source.
/// `quarter_turns` counter-clockwise rotations are applied after an optional
/// horizontal flip.
fn dihedral_source(r: usize, c: usize, n: usize, quarter_turns: usize, flip: bool) -> (usize, usize) {
    // undo the rotation
    let (mut r, mut c) = (r, c);
    for _ in 0..quarter_turns % 4 {
        // one ccw turn sends (r, c) -> (n-1-c, r); invert it
        let (pr, pc) = (c, n - 1 - r);
        r = pr;
        c = pc;
    }
    if flip {
        c = n - 1 - c;
    }
    (r, c)
}

fn transform<T: Copy>(src: &[T], n: usize, channels: usize, quarter_turns: usize, flip: bool) -> Vec<T> {
    let mut out = Vec::with_capacity(src.len());
    for r in 0..n {
        for c in 0..n {
            let (sr, sc) = dihedral_source(r, c, n, quarter_turns, flip);
            let i = (sr * n + sc) * channels;
            out.extend_from_slice(&src[i..i + channels]);
        }
    }
    out
}

/// Original and horizontally flipped crop, each rotated by 0, 90, 180 and 270
/// degrees: eight pairs, no deduplication.
pub fn augment_eightfold(tile: &RgbTile, mask: &RoadMask) -> Result<Vec<(RgbTile, RoadMask)>> {
    let n = tile.height();
    if tile.width() != n {
        return Err(Error::invalid(format!("eightfold augmentation needs a square crop, got {}x{}", n, tile.width())));
    }
    if (mask.height(), mask.width()) != (n, n) {
        return Err(Error::shape("mask and tile sizes differ"));
    }
    let mut out = Vec::with_capacity(8);
    for flip in [false, true] {
        for turns in 0..4 {
            let t = RgbTile::new(n, n, transform(tile.pixels(), n, 3, turns, flip))?;
            let m = RoadMask::new(n, n, transform(mask.labels(), n, 1, turns, flip))?;
            out.push((t, m));
        }
    }
    Ok(out)
}

/// Crop, filter and (optionally) eightfold-augment labeled records. Crop
/// placement for record `i` is seeded with `seed + i`.
pub fn augment_records(records: &[SampleRecord], cfg: &AugmentationConfig, seed: u64) -> Result<Vec<SampleRecord>> {
    cfg.validate()?;
    let min = cfg.effective_min_road_pixels();
    let mut out = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        let mask = rec
            .mask
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("sample {} has no mask to augment with", rec.id)))?;
        let patches = crop_patches(&rec.tile, mask, cfg, seed.wrapping_add(i as u64))?;
        let pairs = patches.into_iter().enumerate().map(|(k, p)| ((k, p.top, p.left, p.tile), p.mask)).collect();
        for ((k, top, left, tile), mask) in filter_by_road_pixels(pairs, min) {
            let variants = if cfg.do_eightfold { augment_eightfold(&tile, &mask)? } else { vec![(tile, mask)] };
            for (j, (tile, mask)) in variants.into_iter().enumerate() {
                out.push(SampleRecord {
                    id: format!("{}_c{k:02}_d{j}", rec.id),
                    tile,
                    mask: Some(mask),
                    domain: rec.domain,
                    provenance: format!("{}|crop({top},{left})|d{j}", rec.provenance),
                });
            }
        }
    }
    Ok(out)
}
