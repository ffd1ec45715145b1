//! Procedural road corpora with controllable domain shift.
//!
//! Each image carries 1+ roads. A road is a Catmull-Rom spline through 2 to 5
//! control points running between two image borders, stroked at a sampled
//! width. Backgrounds mix low-frequency value noise with blurred speckle.
//! Domains differ by road width, road colour, background colour and texture,
//! and the rate of canopy-like occluders painted over roads (image only; the
//! mask keeps the full road). An optional style gradient spreads the images of
//! one domain between a base style and a drifted one.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::io::{save_mask, save_rgb};
use super::manifest::{DatasetManifest, ManifestEntry};
use super::types::{DomainTag, RgbTile, RoadMask};
use crate::error::{Error, Result};

const SAMPLES_PER_SPAN: usize = 24;
const NOISE_CELL: f64 = 16.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorDistribution {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundTexture {
    pub color: ColorDistribution,
    /// Amplitude of the low-frequency value noise.
    pub noise_amplitude: f64,
    /// Box-blur radius applied to the per-pixel speckle.
    pub blur_radius: usize,
    /// Standard deviation of the per-pixel speckle before blurring.
    pub speckle: f64,
}

/// Per-image drift: image `i` draws `s` uniformly from `[0, 1)` and adds `s`
/// times each offset to its sampled colours and noise amplitude.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleGradient {
    pub road_offset: [f64; 3],
    pub background_offset: [f64; 3],
    #[serde(default)]
    pub noise_offset: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticDomainSpec {
    pub seed: u64,
    pub num_images: usize,
    pub image_size: usize,
    pub road_width_range: [f64; 2],
    pub road_count_range: [usize; 2],
    pub curvature: f64,
    pub road_intensity: ColorDistribution,
    pub background: BackgroundTexture,
    pub occlusion_rate: f64,
    #[serde(default)]
    pub style_gradient: Option<StyleGradient>,
    #[serde(default)]
    pub id_prefix: String,
}

impl SyntheticDomainSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("synthetic spec: {msg}")));
        if self.num_images == 0 {
            return bad("num_images must be positive");
        }
        if self.image_size < 16 {
            return bad("image_size must be at least 16");
        }
        let [wl, wh] = self.road_width_range;
        if !(wl > 0.0 && wl <= wh && wh.is_finite()) {
            return bad("road_width_range must be positive and ordered");
        }
        let [cl, ch] = self.road_count_range;
        if cl == 0 || cl > ch {
            return bad("road_count_range must start at 1 or more and be ordered");
        }
        if !(self.curvature >= 0.0 && self.curvature.is_finite()) {
            return bad("curvature must be a finite value >= 0");
        }
        if !(0.0..=1.0).contains(&self.occlusion_rate) {
            return bad("occlusion_rate must lie in [0, 1]");
        }
        let colors = [self.road_intensity, self.background.color];
        if colors.iter().any(|c| c.std.iter().chain(&c.mean).any(|v| !v.is_finite()) || c.std.iter().any(|s| *s < 0.0))
        {
            return bad("colour distributions need finite means and non-negative deviations");
        }
        if self.background.noise_amplitude < 0.0 || self.background.speckle < 0.0 {
            return bad("texture amplitudes must be non-negative");
        }
        if let Some(g) = &self.style_gradient {
            if g.road_offset.iter().chain(&g.background_offset).chain([&g.noise_offset]).any(|v| !v.is_finite()) {
                return bad("style gradient offsets must be finite");
            }
            if self.background.noise_amplitude + g.noise_offset < 0.0 {
                return bad("style gradient drives the noise amplitude negative");
            }
        }
        Ok(())
    }
}

/// Centre line of one road in continuous pixel coordinates `(x, y)`; pixel
/// `(row, col)` has its centre at `(col + 0.5, row + 0.5)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Road {
    pub points: Vec<[f64; 2]>,
    pub width: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub tile: RgbTile,
    pub mask: RoadMask,
    pub roads: Vec<Road>,
}

fn border_point(rng: &mut ChaCha8Rng, side: usize, size: f64) -> [f64; 2] {
    let t = rng.gen_range(0.1..0.9) * size;
    match side {
        0 => [t, 0.0],
        1 => [size, t],
        2 => [t, size],
        _ => [0.0, t],
    }
}

fn catmull_rom(p0: [f64; 2], p1: [f64; 2], p2: [f64; 2], p3: [f64; 2], t: f64) -> [f64; 2] {
    let t2 = t * t;
    let t3 = t2 * t;
    let mut out = [0.0; 2];
    for k in 0..2 {
        out[k] = 0.5
            * (2.0 * p1[k]
                + (-p0[k] + p2[k]) * t
                + (2.0 * p0[k] - 5.0 * p1[k] + 4.0 * p2[k] - p3[k]) * t2
                + (-p0[k] + 3.0 * p1[k] - 3.0 * p2[k] + p3[k]) * t3);
    }
    out
}

fn sample_road(rng: &mut ChaCha8Rng, spec: &SyntheticDomainSpec) -> Road {
    let size = spec.image_size as f64;
    let side_a = rng.gen_range(0..4);
    let side_b = (side_a + rng.gen_range(1..4)) % 4;
    let start = border_point(rng, side_a, size);
    let end = border_point(rng, side_b, size);
    let n_ctrl = rng.gen_range(2..=5usize);
    let (dx, dy) = (end[0] - start[0], end[1] - start[1]);
    let len = (dx * dx + dy * dy).sqrt().max(1e-9);
    let normal = [-dy / len, dx / len];
    let offset = Normal::new(0.0, spec.curvature * size * 0.15 + 1e-12).expect("finite deviation");
    let mut ctrl = Vec::with_capacity(n_ctrl);
    for i in 0..n_ctrl {
        let t = i as f64 / (n_ctrl - 1) as f64;
        let mut p = [start[0] + dx * t, start[1] + dy * t];
        if i > 0 && i + 1 < n_ctrl {
            let o = offset.sample(rng);
            p[0] += normal[0] * o;
            p[1] += normal[1] * o;
        }
        ctrl.push(p);
    }
    let mut points = Vec::with_capacity((n_ctrl - 1) * SAMPLES_PER_SPAN + 1);
    for i in 0..n_ctrl - 1 {
        let p0 = ctrl[i.saturating_sub(1)];
        let p1 = ctrl[i];
        let p2 = ctrl[i + 1];
        let p3 = ctrl[(i + 2).min(n_ctrl - 1)];
        for s in 0..SAMPLES_PER_SPAN {
            points.push(catmull_rom(p0, p1, p2, p3, s as f64 / SAMPLES_PER_SPAN as f64));
        }
    }
    points.push(ctrl[n_ctrl - 1]);
    let [wl, wh] = spec.road_width_range;
    let width = if wh > wl { rng.gen_range(wl..=wh) } else { wl };
    Road { points, width }
}

pub(crate) fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (vx, vy) = (b[0] - a[0], b[1] - a[1]);
    let (wx, wy) = (p[0] - a[0], p[1] - a[1]);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 { ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (cx, cy) = (a[0] + t * vx - p[0], a[1] + t * vy - p[1]);
    (cx * cx + cy * cy).sqrt()
}

/// Marks every pixel whose centre lies within `width / 2` of a road's centre
/// line, scanning only each segment's bounding box.
pub fn rasterize_roads(roads: &[Road], size: usize) -> RoadMask {
    let mut mask = RoadMask::zeros(size, size);
    for road in roads {
        let half = road.width / 2.0;
        for seg in road.points.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let x0 = (a[0].min(b[0]) - half - 1.0).floor().max(0.0) as usize;
            let x1 = ((a[0].max(b[0]) + half + 1.0).ceil().max(0.0) as usize).min(size);
            let y0 = (a[1].min(b[1]) - half - 1.0).floor().max(0.0) as usize;
            let y1 = ((a[1].max(b[1]) + half + 1.0).ceil().max(0.0) as usize).min(size);
            for row in y0..y1 {
                for col in x0..x1 {
                    if mask.get(row, col) == 0 && segment_distance([col as f64 + 0.5, row as f64 + 0.5], a, b) <= half {
                        mask.set(row, col, true);
                    }
                }
            }
        }
    }
    mask
}

fn box_blur(field: &[f64], size: usize, radius: usize) -> Vec<f64> {
    if radius == 0 {
        return field.to_vec();
    }
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for r in 0..size {
            for c in 0..size {
                let (mut s, mut n) = (0.0, 0.0);
                let (lo, hi) = if horizontal { (c, c) } else { (r, r) };
                for k in lo.saturating_sub(radius)..=(hi + radius).min(size - 1) {
                    s += if horizontal { src[r * size + k] } else { src[k * size + c] };
                    n += 1.0;
                }
                out[r * size + c] = s / n;
            }
        }
        out
    };
    let h = pass(field, true);
    pass(&h, false)
}

fn value_noise(rng: &mut ChaCha8Rng, size: usize) -> Vec<f64> {
    let cells = (size as f64 / NOISE_CELL).ceil() as usize + 2;
    let lattice: Vec<f64> = (0..cells * cells).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = vec![0.0; size * size];
    for r in 0..size {
        let fy = (r as f64 + 0.5) / NOISE_CELL;
        let (iy, ty) = (fy.floor() as usize, smooth(fy.fract()));
        for c in 0..size {
            let fx = (c as f64 + 0.5) / NOISE_CELL;
            let (ix, tx) = (fx.floor() as usize, smooth(fx.fract()));
            let v00 = lattice[iy * cells + ix];
            let v01 = lattice[iy * cells + ix + 1];
            let v10 = lattice[(iy + 1) * cells + ix];
            let v11 = lattice[(iy + 1) * cells + ix + 1];
            let top = v00 + (v01 - v00) * tx;
            let bot = v10 + (v11 - v10) * tx;
            out[r * size + c] = top + (bot - top) * ty;
        }
    }
    out
}

fn sample_color(rng: &mut ChaCha8Rng, dist: &ColorDistribution) -> [f64; 3] {
    std::array::from_fn(|c| Normal::new(dist.mean[c], dist.std[c]).expect("finite deviation").sample(rng))
}

/// Renders image `index` of a domain. Deterministic in `(spec, index)`.
pub fn render_sample(spec: &SyntheticDomainSpec, index: usize) -> Result<SyntheticSample> {
    spec.validate()?;
    let size = spec.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);

    let (roads, mask) = loop {
        let [cl, ch] = spec.road_count_range;
        let count = rng.gen_range(cl..=ch);
        let roads: Vec<Road> = (0..count).map(|_| sample_road(&mut rng, spec)).collect();
        let mask = rasterize_roads(&roads, size);
        if mask.road_pixels() > 0 {
            break (roads, mask);
        }
    };

    let drift = spec.style_gradient.map(|g| (rng.gen_range(0.0..1.0), g));
    let mut bg = sample_color(&mut rng, &spec.background.color);
    let mut noise_amplitude = spec.background.noise_amplitude;
    if let Some((s, g)) = drift {
        for (v, o) in bg.iter_mut().zip(g.background_offset) {
            *v += s * o;
        }
        noise_amplitude += s * g.noise_offset;
    }
    let low = value_noise(&mut rng, size);
    let speckle_dist = Normal::new(0.0, spec.background.speckle + 1e-12).expect("finite deviation");
    let speckle: Vec<f64> = (0..size * size).map(|_| speckle_dist.sample(&mut rng)).collect();
    let speckle = box_blur(&speckle, size, spec.background.blur_radius);
    let tint: [f64; 3] = [rng.gen_range(0.8..1.2), rng.gen_range(0.8..1.2), rng.gen_range(0.8..1.2)];

    let mut img = vec![0.0f64; size * size * 3];
    for i in 0..size * size {
        let t = noise_amplitude * low[i] + speckle[i];
        for c in 0..3 {
            img[i * 3 + c] = bg[c] + t * tint[c];
        }
    }

    let fine = Normal::new(0.0, 0.02).expect("finite deviation");
    for road in &roads {
        let mut color = sample_color(&mut rng, &spec.road_intensity);
        if let Some((s, g)) = drift {
            for (v, o) in color.iter_mut().zip(g.road_offset) {
                *v += s * o;
            }
        }
        let single = rasterize_roads(std::slice::from_ref(road), size);
        for (i, l) in single.labels().iter().enumerate() {
            if *l == 1 {
                let n = fine.sample(&mut rng);
                for c in 0..3 {
                    img[i * 3 + c] = color[c] + n + 0.5 * speckle[i];
                }
            }
        }
    }

    if spec.occlusion_rate > 0.0 {
        for road in &roads {
            for p in road.points.iter().step_by(8) {
                if rng.gen_bool(spec.occlusion_rate) {
                    let radius = road.width * rng.gen_range(0.6..1.1);
                    let shade = rng.gen_range(0.45..0.7);
                    let canopy = [bg[0] * shade, bg[1] * (shade + 0.1), bg[2] * shade];
                    let r0 = (p[1] - radius).floor().max(0.0) as usize;
                    let r1 = ((p[1] + radius).ceil().max(0.0) as usize).min(size);
                    let c0 = (p[0] - radius).floor().max(0.0) as usize;
                    let c1 = ((p[0] + radius).ceil().max(0.0) as usize).min(size);
                    for r in r0..r1 {
                        for c in c0..c1 {
                            let (dx, dy) = (c as f64 + 0.5 - p[0], r as f64 + 0.5 - p[1]);
                            if dx * dx + dy * dy <= radius * radius {
                                let i = r * size + c;
                                for k in 0..3 {
                                    img[i * 3 + k] = canopy[k] + speckle[i];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    let raw: Vec<u8> = img.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let tile = RgbTile::from_rgb8(size, size, &raw)?;
    Ok(SyntheticSample { tile, mask, roads })
}

/// Writes `num_images` image/mask pairs under `out_dir/images` and
/// `out_dir/masks` and returns the manifest (stats computed from the written
/// images). Every entry carries its mask path.
pub fn generate_synthetic_domain(
    spec: &SyntheticDomainSpec,
    out_dir: &Path,
    domain: DomainTag,
) -> Result<DatasetManifest> {
    spec.validate()?;
    let images = out_dir.join("images");
    let masks = out_dir.join("masks");
    for d in [&images, &masks] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut entries = Vec::with_capacity(spec.num_images);
    for i in 0..spec.num_images {
        let sample = render_sample(spec, i)?;
        let id = format!("{}{i:04}", spec.id_prefix);
        let image_rel = format!("images/{id}.png");
        let mask_rel = format!("masks/{id}.png");
        save_rgb(&sample.tile, &out_dir.join(&image_rel))?;
        save_mask(&sample.mask, &out_dir.join(&mask_rel))?;
        entries.push(ManifestEntry { id, image: image_rel, mask: Some(mask_rel), domain });
    }
    DatasetManifest::build(out_dir, entries)
}

/// A source/target pair of synthetic domains; the last `val_fraction` of the
/// target images (rounded) form a labeled validation split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticShiftSpec {
    pub source: SyntheticDomainSpec,
    pub target: SyntheticDomainSpec,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
}

fn default_val_fraction() -> f64 {
    0.2
}

/// File names of the manifests written by [`synthesize_shift`].
pub const SOURCE_TRAIN: &str = "source_train.json";
pub const TARGET_TRAIN: &str = "target_train.json";
pub const TARGET_VAL: &str = "target_val.json";
/// Target training images with their ground truth; for evaluation only.
pub const TARGET_TRAIN_GT: &str = "target_train_gt.json";

#[derive(Clone, Debug, PartialEq)]
pub struct ShiftManifests {
    pub source_train: DatasetManifest,
    pub target_train: DatasetManifest,
    pub target_val: DatasetManifest,
    pub target_train_gt: DatasetManifest,
}

impl SyntheticShiftSpec {
    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.target.validate()?;
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config("val_fraction must lie in (0, 1)".into()));
        }
        let val = self.val_count();
        if val == 0 || val >= self.target.num_images {
            return Err(Error::Config("val_fraction leaves no target training or validation images".into()));
        }
        Ok(())
    }

    pub fn val_count(&self) -> usize {
        (self.target.num_images as f64 * self.val_fraction).round() as usize
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Renders both domains under `out_dir/{source,target}` and writes the four
/// manifests next to them. Target-train entries have their masks removed.
pub fn synthesize_shift(spec: &SyntheticShiftSpec, out_dir: &Path) -> Result<ShiftManifests> {
    spec.validate()?;
    let out_dir = if out_dir.is_absolute() {
        out_dir.to_path_buf()
    } else {
        std::env::current_dir().map_err(|e| Error::io(out_dir, e))?.join(out_dir)
    };
    let prefixed = |m: DatasetManifest, dir: &str| -> Vec<ManifestEntry> {
        m.entries
            .into_iter()
            .map(|e| ManifestEntry {
                image: format!("{dir}/{}", e.image),
                mask: e.mask.map(|p| format!("{dir}/{p}")),
                ..e
            })
            .collect()
    };
    let source =
        prefixed(generate_synthetic_domain(&spec.source, &out_dir.join("source"), DomainTag::Source)?, "source");
    let mut target =
        prefixed(generate_synthetic_domain(&spec.target, &out_dir.join("target"), DomainTag::Target)?, "target");
    let val = target.split_off(target.len() - spec.val_count());
    let unlabeled: Vec<ManifestEntry> = target.iter().cloned().map(|e| ManifestEntry { mask: None, ..e }).collect();

    let write = |entries: Vec<ManifestEntry>, name: &str| -> Result<DatasetManifest> {
        let mut m = DatasetManifest::build(&out_dir, entries)?;
        m.root = ".".into();
        let path = out_dir.join(name);
        m.save(&path)?;
        DatasetManifest::load(&path)
    };
    Ok(ShiftManifests {
        source_train: write(source, SOURCE_TRAIN)?,
        target_train: write(unlabeled, TARGET_TRAIN)?,
        target_val: write(val, TARGET_VAL)?,
        target_train_gt: write(target, TARGET_TRAIN_GT)?,
    })
}
