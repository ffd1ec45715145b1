//! PNG encoding of tiles and masks, and standardization into network input.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, RgbImage};

use super::manifest::ChannelStats;
use super::types::{DomainTag, RgbTile, RoadMask};
use crate::audit;
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub fn load_rgb(path: &Path) -> Result<RgbTile> {
    let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
    let rgb = img.to_rgb8();
    RgbTile::from_rgb8(rgb.height() as usize, rgb.width() as usize, rgb.as_raw())
}

pub fn save_rgb(tile: &RgbTile, path: &Path) -> Result<()> {
    let img = RgbImage::from_raw(tile.width() as u32, tile.height() as u32, tile.to_rgb8())
        .ok_or_else(|| Error::shape("tile buffer does not match its size"))?;
    img.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// Decodes an 8-bit mask where 0 is background and 255 is road; any other value
/// is rejected. The read is recorded in the audit log.
pub fn load_mask(path: &Path, domain: DomainTag) -> Result<RoadMask> {
    audit::record(path, domain);
    let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
    let gray = img.to_luma8();
    let labels = gray
        .as_raw()
        .iter()
        .map(|v| match v {
            0 => Ok(0),
            255 => Ok(1),
            other => Err(Error::invalid(format!("mask {} holds value {other}; expected 0 or 255", path.display()))),
        })
        .collect::<Result<Vec<u8>>>()?;
    RoadMask::new(gray.height() as usize, gray.width() as usize, labels)
}

pub fn save_mask(mask: &RoadMask, path: &Path) -> Result<()> {
    let raw: Vec<u8> = mask.labels().iter().map(|v| v * 255).collect();
    let img = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, raw)
        .ok_or_else(|| Error::shape("mask buffer does not match its size"))?;
    img.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// Writes per-pixel probabilities as 16-bit grayscale (0 to 65535).
pub fn save_probability_map(probs: &[f32], height: usize, width: usize, path: &Path) -> Result<()> {
    let raw: Vec<u16> = probs.iter().map(|p| (p.clamp(0.0, 1.0) * 65535.0).round() as u16).collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(width as u32, height as u32, raw)
        .ok_or_else(|| Error::shape("probability buffer does not match its size"))?;
    img.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// `(tile - mean) / std` per channel, laid out as a `[1, 3, H, W]` tensor.
/// Values are not clamped.
pub fn standardize(tile: &RgbTile, stats: &ChannelStats) -> Result<Tensor> {
    stats.validate()?;
    let (h, w) = (tile.height(), tile.width());
    let plane = h * w;
    let mut data = vec![0.0f32; 3 * plane];
    let mean = stats.mean.map(|v| v as f32);
    let inv = stats.std.map(|v| 1.0 / v as f32);
    for (i, px) in tile.pixels().chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = (px[c] - mean[c]) * inv[c];
        }
    }
    Tensor::from_vec([1, 3, h, w], data)
}

/// Standardizes a raw 8-bit interleaved RGB buffer.
pub fn normalize_tile(raw: &[u8], height: usize, width: usize, stats: &ChannelStats) -> Result<Tensor> {
    standardize(&RgbTile::from_rgb8(height, width, raw)?, stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_stats_divide_by_255() {
        let raw = [0u8, 51, 255, 102, 204, 153];
        let t = normalize_tile(&raw, 1, 2, &ChannelStats { mean: [0.0; 3], std: [1.0; 3] }).unwrap();
        // planar layout: channel 0 = [0, 102], channel 1 = [51, 204], channel 2 = [255, 153]
        let expected = [0.0, 0.4, 0.2, 0.8, 1.0, 0.6];
        for (a, b) in t.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_image_at_its_mean_is_zero() {
        let raw = [102u8; 12];
        let stats = ChannelStats { mean: [0.4; 3], std: [0.2; 3] };
        let t = normalize_tile(&raw, 2, 2, &stats).unwrap();
        assert!(t.data().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn standardized_value_example() {
        let stats = ChannelStats { mean: [0.5; 3], std: [0.25; 3] };
        let t = normalize_tile(&[255, 255, 255], 1, 1, &stats).unwrap();
        assert!(t.data().iter().all(|v| (*v - 2.0).abs() < 1e-6));
    }

    #[test]
    fn zero_std_rejected() {
        let stats = ChannelStats { mean: [0.5; 3], std: [0.25, 0.0, 0.25] };
        assert!(normalize_tile(&[1, 2, 3], 1, 1, &stats).is_err());
    }

    #[test]
    fn mask_encoding_round_trip_and_rejection() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let m = RoadMask::new(2, 3, vec![0, 1, 1, 0, 0, 1]).unwrap();
        save_mask(&m, &p).unwrap();
        assert_eq!(load_mask(&p, DomainTag::Source).unwrap(), m);
        let bad = GrayImage::from_raw(2, 1, vec![0, 128]).unwrap();
        let q = dir.path().join("bad.png");
        bad.save(&q).unwrap();
        assert!(load_mask(&q, DomainTag::Source).is_err());
    }
}
