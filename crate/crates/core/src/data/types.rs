use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which side of the adaptation problem a sample belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainTag {
    Source,
    Target,
}

/// RGB image with channel values in `[0, 1]`, stored row-major and interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbTile {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl RgbTile {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != height * width * 3 {
            return Err(Error::shape(format!(
                "{height}x{width} tile needs {} values, got {}",
                height * width * 3,
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("tile value {v} outside [0, 1]")));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn from_rgb8(height: usize, width: usize, raw: &[u8]) -> Result<Self> {
        Self::new(height, width, raw.iter().map(|v| *v as f32 / 255.0).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect()
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> RgbTile {
        let mut pixels = Vec::with_capacity(height * width * 3);
        for r in top..top + height {
            let start = (r * self.width + left) * 3;
            pixels.extend_from_slice(&self.pixels[start..start + width * 3]);
        }
        RgbTile { height, width, pixels }
    }
}

/// Binary road mask: 1 = road, 0 = background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoadMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl RoadMask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::shape(format!(
                "{height}x{width} mask needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        if let Some(v) = labels.iter().find(|v| **v > 1) {
            return Err(Error::invalid(format!("mask label {v} is not 0 or 1")));
        }
        Ok(Self { height, width, labels })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, labels: vec![0; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.labels[row * self.width + col] = value as u8;
    }

    pub fn road_pixels(&self) -> usize {
        self.labels.iter().filter(|v| **v == 1).count()
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> RoadMask {
        let mut labels = Vec::with_capacity(height * width);
        for r in top..top + height {
            let start = r * self.width + left;
            labels.extend_from_slice(&self.labels[start..start + width]);
        }
        RoadMask { height, width, labels }
    }
}

/// One image (and optionally its mask) inside a corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub tile: RgbTile,
    pub mask: Option<RoadMask>,
    pub domain: DomainTag,
    pub provenance: String,
}

impl SampleRecord {
    pub fn check(&self) -> Result<()> {
        if let Some(mask) = &self.mask {
            if (mask.height(), mask.width()) != (self.tile.height(), self.tile.width()) {
                return Err(Error::shape(format!(
                    "sample {}: mask {}x{} does not match tile {}x{}",
                    self.id,
                    mask.height(),
                    mask.width(),
                    self.tile.height(),
                    self.tile.width()
                )));
            }
        }
        Ok(())
    }
}
