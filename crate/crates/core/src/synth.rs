//! Synthetic SAR-like scenes for tests and demos.
//!
//! Background clutter is multiplicative speckle: each pixel is the
//! configured mean level times a unit-mean gamma variate with `looks` as
//! shape (the L-look intensity model). Ships are bright rotated ellipses;
//! an optional dark band to their right imitates a radar shadow.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::augment::task_seed;
use crate::dataset::{Annotation, BoundingBox, Dataset, DatasetImage};
use crate::error::{Error, Result};
use crate::mask::{encode_rle, BinaryGrid, InstanceMask, RleCounts, Segmentation};
use crate::raster::{BitDepth, ImageRaster};

const SHIP_GAIN: f64 = 6.0;
const SHADOW_GAIN: f64 = 0.12;
const PLACEMENT_TRIES: u32 = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub width: u32,
    pub height: u32,
    /// Inclusive range of ships per scene.
    pub ship_count: (u32, u32),
    /// Inclusive range of ship length (ellipse major axis) in pixels.
    pub ship_length: (u32, u32),
    /// Mean background intensity.
    pub background_level: f64,
    pub looks: u32,
    pub shadow: bool,
    pub depth: BitDepth,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            ship_count: (1, 4),
            ship_length: (12, 40),
            background_level: 30.0,
            looks: 4,
            shadow: true,
            depth: BitDepth::Eight,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(Error::Config(format!(
                "scene size {}x{} is below 8x8",
                self.width, self.height
            )));
        }
        if self.ship_count.0 > self.ship_count.1 {
            return Err(Error::Config("ship count range is inverted".into()));
        }
        if self.ship_length.0 < 8 || self.ship_length.0 > self.ship_length.1 {
            return Err(Error::Config(
                "ship length range must satisfy 8 <= min <= max".into(),
            ));
        }
        if self.looks == 0 {
            return Err(Error::Config("looks must be at least 1".into()));
        }
        if !(self.background_level.is_finite() && self.background_level > 0.0) {
            return Err(Error::Config("background level must be positive".into()));
        }
        Ok(())
    }
}

/// One generated image with its ship instances.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub raster: ImageRaster,
    pub instances: Vec<(BoundingBox, InstanceMask)>,
}

/// `n` unit-mean gamma speckle factors with shape `looks`.
pub fn speckle_factors<R: Rng + ?Sized>(rng: &mut R, looks: u32, n: usize) -> Vec<f64> {
    let gamma = Gamma::new(looks as f64, 1.0 / looks as f64).expect("looks >= 1");
    (0..n).map(|_| gamma.sample(rng)).collect()
}

fn quantize(v: f64, depth: BitDepth) -> u16 {
    v.round().clamp(0.0, depth.max_level() as f64) as u16
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn contains(&self, px: f64, py: f64) -> bool {
        let (dx, dy) = (px - self.cx, py - self.cy);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }

    fn half_extents(&self) -> (f64, f64) {
        let (a2, b2) = (self.a * self.a, self.b * self.b);
        (
            (a2 * self.cos * self.cos + b2 * self.sin * self.sin).sqrt(),
            (a2 * self.sin * self.sin + b2 * self.cos * self.cos).sqrt(),
        )
    }
}

/// Render one scene. Ships that cannot be placed without overlapping an
/// earlier ship (or its shadow) after a bounded number of tries are dropped.
pub fn generate_scene<R: Rng + ?Sized>(cfg: &SceneConfig, rng: &mut R) -> Result<Scene> {
    cfg.validate()?;
    let (w, h) = (cfg.width as usize, cfg.height as usize);
    let speckle = speckle_factors(rng, cfg.looks, w * h);
    let mut level: Vec<f64> = speckle.iter().map(|s| cfg.background_level * s).collect();

    // 1 = ship or shadow of an accepted ship, used for overlap rejection
    let mut occupied = BinaryGrid::zeros(w, h);
    let mut instances = Vec::new();
    let count = rng.random_range(cfg.ship_count.0..=cfg.ship_count.1);

    for _ in 0..count {
        for _ in 0..PLACEMENT_TRIES {
            let length = rng.random_range(cfg.ship_length.0..=cfg.ship_length.1) as f64;
            let a = length / 2.0;
            let b = (a * rng.random_range(0.2..0.4)).max(1.5);
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let shadow_len = if cfg.shadow { (b.ceil() as usize).max(2) } else { 0 };
            let mut e = Ellipse {
                cx: 0.0,
                cy: 0.0,
                a,
                b,
                cos: theta.cos(),
                sin: theta.sin(),
            };
            let (ex, ey) = e.half_extents();
            let margin_x = ex + 1.0 + shadow_len as f64;
            let margin_y = ey + 1.0;
            if 2.0 * margin_x >= w as f64 || 2.0 * margin_y >= h as f64 {
                continue;
            }
            e.cx = rng.random_range(ex + 1.0..w as f64 - margin_x);
            e.cy = rng.random_range(margin_y..h as f64 - margin_y);

            let mut mask = BinaryGrid::zeros(w, h);
            let (x0, x1) = ((e.cx - ex).floor().max(0.0) as usize, ((e.cx + ex).ceil() as usize).min(w - 1));
            let (y0, y1) = ((e.cy - ey).floor().max(0.0) as usize, ((e.cy + ey).ceil() as usize).min(h - 1));
            for y in y0..=y1 {
                for x in x0..=x1 {
                    if e.contains(x as f64 + 0.5, y as f64 + 0.5) {
                        mask.set(x, y, true);
                    }
                }
            }
            let Some(bbox) = mask.tight_bbox() else {
                continue;
            };
            let mut shadow = Vec::new();
            for y in bbox.y as usize..(bbox.y + bbox.h) as usize {
                for x in bbox.x as usize..(bbox.x + bbox.w) as usize {
                    if !mask.get(x, y) {
                        continue;
                    }
                    for k in 1..=shadow_len {
                        if x + k < w && !mask.get(x + k, y) {
                            shadow.push((x + k, y));
                        }
                    }
                }
            }
            // reject overlap with any earlier ship footprint, with a 1 px gap
            let footprint = |x: usize, y: usize| {
                let (xl, xh) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let (yl, yh) = (y.saturating_sub(1), (y + 1).min(h - 1));
                (yl..=yh).any(|yy| (xl..=xh).any(|xx| occupied.get(xx, yy)))
            };
            let (bx0, by0) = (bbox.x as usize, bbox.y as usize);
            let (bx1, by1) = (bx0 + bbox.w as usize, by0 + bbox.h as usize);
            let clashes = (by0..by1).any(|y| (bx0..bx1).any(|x| mask.get(x, y) && footprint(x, y)))
                || shadow.iter().any(|&(x, y)| footprint(x, y));
            if clashes {
                continue;
            }
            for y in by0..by1 {
                for x in bx0..bx1 {
                    if mask.get(x, y) {
                        level[y * w + x] *= SHIP_GAIN;
                        occupied.set(x, y, true);
                    }
                }
            }
            shadow.sort_unstable();
            shadow.dedup();
            for &(x, y) in &shadow {
                level[y * w + x] *= SHADOW_GAIN;
                occupied.set(x, y, true);
            }
            instances.push((bbox, mask));
            break;
        }
    }

    let data = level.iter().map(|&v| quantize(v, cfg.depth)).collect();
    Ok(Scene {
        raster: ImageRaster::new(cfg.width, cfg.height, cfg.depth, data)?,
        instances,
    })
}

fn scene_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(task_seed(seed, stream as u32, index))
}

/// Build a dataset of `images` scenes plus `backgrounds` ship-free scenes.
/// Image and annotation ids start at 1; masks are stored as uncompressed RLE.
pub fn generate_dataset(cfg: &SceneConfig, images: usize, backgrounds: usize) -> Result<Dataset> {
    cfg.validate()?;
    let scenes: Vec<Scene> = (0..images as u64)
        .into_par_iter()
        .map(|i| generate_scene(cfg, &mut scene_rng(cfg.seed, 0, i)))
        .collect::<Result<_>>()?;
    let bg_cfg = SceneConfig {
        ship_count: (0, 0),
        ..cfg.clone()
    };
    let background_pool: Vec<ImageRaster> = (0..backgrounds as u64)
        .into_par_iter()
        .map(|i| generate_scene(&bg_cfg, &mut scene_rng(cfg.seed, 1, i)).map(|s| s.raster))
        .collect::<Result<_>>()?;

    let mut ds = Dataset {
        categories: vec![json!({"id": 1, "name": "ship", "supercategory": "ship"})],
        background_pool,
        ..Default::default()
    };
    let mut next_ann = 1u64;
    for (i, scene) in scenes.into_iter().enumerate() {
        let image_id = i as u64 + 1;
        for (bbox, mask) in scene.instances {
            let mut extra = BTreeMap::new();
            extra.insert("area".to_string(), Value::from(mask.count_ones() as u64));
            extra.insert("iscrowd".to_string(), Value::from(0));
            ds.annotations.push(Annotation {
                id: next_ann,
                image_id,
                bbox,
                segmentation: Segmentation::Rle {
                    counts: RleCounts::List(encode_rle(&mask)),
                    size: [cfg.height, cfg.width],
                },
                mask,
                category_id: 1,
                extra,
            });
            next_ann += 1;
        }
        ds.images.push(DatasetImage {
            id: image_id,
            file_name: format!("scene_{image_id:05}.png"),
            raster: scene.raster,
            extra: BTreeMap::new(),
        });
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_ships_means_pure_speckle() {
        let cfg = SceneConfig {
            ship_count: (0, 0),
            ..Default::default()
        };
        let scene = generate_scene(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(scene.instances.is_empty());
    }

    #[test]
    fn bboxes_are_tight() {
        let cfg = SceneConfig {
            ship_count: (3, 6),
            ..Default::default()
        };
        for seed in 0..20 {
            let scene = generate_scene(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            for (bbox, mask) in &scene.instances {
                assert_eq!(mask.tight_bbox().as_ref(), Some(bbox));
                let (x0, y0) = (bbox.x as usize, bbox.y as usize);
                let (x1, y1) = (x0 + bbox.w as usize - 1, y0 + bbox.h as usize - 1);
                assert!((y0..=y1).any(|y| mask.get(x0, y)));
                assert!((y0..=y1).any(|y| mask.get(x1, y)));
                assert!((x0..=x1).any(|x| mask.get(x, y0)));
                assert!((x0..=x1).any(|x| mask.get(x, y1)));
            }
        }
    }

    #[test]
    fn seeded_scene_is_reproducible() {
        let cfg = SceneConfig::default();
        let a = generate_scene(&cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = generate_scene(&cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn speckle_mean_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for looks in [4, 8] {
            let f = speckle_factors(&mut rng, looks, 512 * 512);
            let mean = f.iter().sum::<f64>() / f.len() as f64;
            assert!((mean - 1.0).abs() < 0.02, "looks {looks}: mean {mean}");
        }
    }

    #[test]
    fn generated_dataset_validates() {
        let cfg = SceneConfig {
            depth: BitDepth::Sixteen,
            background_level: 3000.0,
            ..Default::default()
        };
        let ds = generate_dataset(&cfg, 8, 2).unwrap();
        ds.validate().unwrap();
        assert_eq!(ds.images.len(), 8);
        assert_eq!(ds.background_pool.len(), 2);
        assert!(!ds.annotations.is_empty());
    }

    #[test]
    fn invalid_config() {
        let cfg = SceneConfig {
            width: 4,
            ..Default::default()
        };
        assert!(generate_scene(&cfg, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap_err()
            .is_config());
    }
}
