//! Instance-level augmentation over a dataset.
//!
//! For every ship instance a rectangle flush with one edge of its bounding
//! box is overwritten. What goes into the rectangle depends on [`Method`]:
//!
//! * `Cpil`: a background noise patch histogram-matched to the non-target
//!   pixels of the same box (context preserving).
//! * `Re`: per-pixel uniform random levels (random erasure).
//! * `Dbi`: the raw background patch (direct background insertion).
//! * `None`: nothing.
//!
//! Pixels outside the rectangles are never touched and annotations are
//! copied verbatim.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::context::{context_pixels, match_histogram, sample_noise_patch, PatchSource};
use crate::dataset::{Annotation, BoundingBox, Dataset, DatasetImage};
use crate::error::{Error, Result};
use crate::raster::{ImageRaster, IntensityGrid};
use crate::rect::{
    sample_rect, RatioRange, Rect, DEFAULT_AREA_RATIO, DEFAULT_ASPECT_RATIO, DEFAULT_MAX_RETRIES,
};

pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cpil,
    Re,
    Dbi,
    None,
}

impl Method {
    pub fn needs_backgrounds(self) -> bool {
        matches!(self, Method::Cpil | Method::Dbi)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Cpil => "cpil",
            Method::Re => "re",
            Method::Dbi => "dbi",
            Method::None => "none",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cpil" => Ok(Method::Cpil),
            "re" => Ok(Method::Re),
            "dbi" => Ok(Method::Dbi),
            "none" => Ok(Method::None),
            other => Err(Error::Config(format!(
                "unknown method '{other}', expected cpil, re, dbi or none"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub method: Method,
    pub area_ratio: RatioRange,
    pub aspect_ratio: RatioRange,
    /// Probability that a given instance is augmented in a given copy.
    pub apply_prob: f64,
    /// Number of augmented copies of the dataset to produce.
    pub copies: u32,
    /// Also emit the unmodified images ahead of the copies.
    pub include_originals: bool,
    pub seed: u64,
    pub workers: usize,
    /// Extra parameter draws allowed before the rectangle is clamped to the box.
    pub max_retries: u32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            method: Method::Cpil,
            area_ratio: DEFAULT_AREA_RATIO,
            aspect_ratio: DEFAULT_ASPECT_RATIO,
            apply_prob: 1.0,
            copies: 1,
            include_originals: false,
            seed: 0,
            workers: 1,
            max_retries: DEFAULT_MAX_RETRIES,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        self.area_ratio.validate("area ratio range")?;
        self.aspect_ratio.validate("aspect ratio range")?;
        if self.area_ratio.hi >= 1.0 {
            return Err(Error::Config(format!(
                "area ratio upper bound {} must be below 1",
                self.area_ratio.hi
            )));
        }
        if !(0.0..=1.0).contains(&self.apply_prob) {
            return Err(Error::Config(format!(
                "apply probability {} outside [0, 1]",
                self.apply_prob
            )));
        }
        if self.copies == 0 {
            return Err(Error::Config("copies must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(())
    }
}

/// One augmented instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub copy: u32,
    pub source_image_id: u64,
    pub image_id: u64,
    pub annotation_id: u64,
    pub method: Method,
    /// Overwritten region in image coordinates.
    pub rect: BoundingBox,
    /// Same region relative to the bounding box.
    pub rect_in_box: Rect,
    pub area_ratio: f64,
    pub aspect_ratio: f64,
    pub clamped: bool,
    /// The box had no context pixels, so the patch was inserted unmatched.
    pub fallback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch_source: Option<PatchSource>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentSummary {
    pub instances_visited: u64,
    pub augmented: u64,
    pub skipped: u64,
    pub clamped: u64,
    pub fallbacks: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentReport {
    pub config: AugmentConfig,
    pub summary: AugmentSummary,
    pub records: Vec<InstanceRecord>,
}

impl AugmentReport {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serialization is infallible");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            offset: 0,
            message: e.to_string(),
        })
    }
}

/// What [`augment_instance`] did to one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceOutcome {
    pub rect: Rect,
    pub area_ratio: f64,
    pub aspect_ratio: f64,
    pub clamped: bool,
    pub fallback: bool,
    pub patch_source: Option<PatchSource>,
}

/// Augment one instance of `raster` in place. Returns `None` when the
/// method is `None` or the instance was skipped by `apply_prob`.
pub fn augment_instance<R: Rng + ?Sized>(
    raster: &mut ImageRaster,
    ann: &Annotation,
    cfg: &AugmentConfig,
    pool: &[ImageRaster],
    rng: &mut R,
) -> Result<Option<InstanceOutcome>> {
    if cfg.method == Method::None {
        return Ok(None);
    }
    if rng.random::<f64>() >= cfg.apply_prob {
        return Ok(None);
    }
    let bbox = ann.bbox;
    let sampled = sample_rect(rng, &bbox, cfg.area_ratio, cfg.aspect_ratio, cfg.max_retries)?;
    let rect = sampled.rect;
    let dims = (rect.w, rect.h);
    let mut fallback = false;
    let mut patch_source = None;

    let fill = match cfg.method {
        Method::Re => {
            let max = raster.max_level();
            let data = (0..rect.w as usize * rect.h as usize)
                .map(|_| rng.random_range(0..=max))
                .collect();
            IntensityGrid::new(rect.w as usize, rect.h as usize, data)?
        }
        Method::Dbi => {
            let (patch, src) = sample_noise_patch(rng, pool, dims)?;
            patch_source = Some(src);
            patch
        }
        Method::Cpil => {
            let sub = raster.crop(&bbox)?;
            let mask_crop = ann.mask.crop(&bbox)?;
            let context = context_pixels(&sub, &mask_crop, raster.depth().level_count())?;
            let (patch, src) = sample_noise_patch(rng, pool, dims)?;
            patch_source = Some(src);
            if context.is_empty() {
                log::warn!(
                    "annotation {}: mask fills its bbox, inserting unmatched patch",
                    ann.id
                );
                fallback = true;
                patch
            } else {
                match_histogram(&patch, &context.histogram())?
            }
        }
        Method::None => unreachable!(),
    };

    raster.paste(bbox.x + rect.x, bbox.y + rect.y, &fill)?;
    if sampled.clamped {
        log::info!(
            "annotation {}: rectangle clamped to {}x{} box",
            ann.id,
            bbox.w,
            bbox.h
        );
    }
    Ok(Some(InstanceOutcome {
        rect,
        area_ratio: sampled.params.area_ratio,
        aspect_ratio: sampled.params.aspect_ratio,
        clamped: sampled.clamped,
        fallback,
        patch_source,
    }))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the random stream owned by one (copy, image) task.
pub fn task_seed(seed: u64, copy: u32, image_id: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ copy as u64) ^ image_id)
}

fn copy_file_name(name: &str, copy: u32) -> String {
    let path = Path::new(name);
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or(name);
    let file = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}_aug{copy}.{ext}"),
        None => format!("{stem}_aug{copy}"),
    };
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(parent) => PathBuf::from(parent).join(file).to_string_lossy().into_owned(),
        None => file,
    }
}

struct ImageTask<'a> {
    copy: u32,
    image: &'a DatasetImage,
    annotations: Vec<&'a Annotation>,
}

struct TaskResult {
    raster: ImageRaster,
    records: Vec<InstanceRecord>,
    visited: u64,
}

fn run_task(
    task: &ImageTask<'_>,
    cfg: &AugmentConfig,
    pool: &[ImageRaster],
    image_id_offset: u64,
) -> Result<TaskResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(task_seed(cfg.seed, task.copy, task.image.id));
    let mut raster = task.image.raster.clone();
    let mut records = Vec::new();
    for ann in &task.annotations {
        if let Some(out) = augment_instance(&mut raster, ann, cfg, pool, &mut rng)? {
            records.push(InstanceRecord {
                copy: task.copy,
                source_image_id: task.image.id,
                image_id: task.image.id + image_id_offset,
                annotation_id: ann.id,
                method: cfg.method,
                rect: out.rect.absolute(&ann.bbox),
                rect_in_box: out.rect,
                area_ratio: out.area_ratio,
                aspect_ratio: out.aspect_ratio,
                clamped: out.clamped,
                fallback: out.fallback,
                patch_source: out.patch_source,
            });
        }
    }
    Ok(TaskResult {
        raster,
        records,
        visited: task.annotations.len() as u64,
    })
}

/// Id offsets for each output block. Block 0 keeps the original ids, block
/// `b` adds `b * (max_id + 1)`.
#[derive(Debug, Clone, Copy)]
struct Renumbering {
    image_stride: u64,
    annotation_stride: u64,
}

impl Renumbering {
    fn for_dataset(ds: &Dataset) -> Self {
        Self {
            image_stride: ds.images.iter().map(|i| i.id).max().map_or(1, |m| m + 1),
            annotation_stride: ds.annotations.iter().map(|a| a.id).max().map_or(1, |m| m + 1),
        }
    }
}

/// Augment every instance of every image, `cfg.copies` times.
///
/// Each (copy, image) pair draws from its own stream seeded by
/// [`task_seed`], so the output depends only on `cfg`, never on
/// `cfg.workers` or scheduling.
pub fn augment_dataset(ds: &Dataset, cfg: &AugmentConfig) -> Result<(Dataset, AugmentReport)> {
    cfg.validate()?;
    if cfg.method.needs_backgrounds() && ds.background_pool.is_empty() {
        return Err(Error::Config(format!(
            "method {} needs a non-empty background pool",
            cfg.method
        )));
    }

    let by_image = ds.annotations_by_image();
    let tasks: Vec<ImageTask<'_>> = (0..cfg.copies)
        .flat_map(|copy| {
            ds.images.iter().map(move |image| (copy, image))
        })
        .map(|(copy, image)| ImageTask {
            copy,
            image,
            annotations: by_image
                .get(&image.id)
                .map(|idx| idx.iter().map(|&i| &ds.annotations[i]).collect())
                .unwrap_or_default(),
        })
        .collect();

    let renumber = Renumbering::for_dataset(ds);
    let block_of = |copy: u32| copy as u64 + cfg.include_originals as u64;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", cfg.workers)))?;
    let results: Vec<TaskResult> = pool.install(|| {
        tasks
            .par_iter()
            .map(|t| {
                run_task(
                    t,
                    cfg,
                    &ds.background_pool,
                    block_of(t.copy) * renumber.image_stride,
                )
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut out = Dataset {
        images: Vec::with_capacity(ds.images.len() * (cfg.copies as usize + 1)),
        annotations: Vec::new(),
        categories: ds.categories.clone(),
        background_pool: ds.background_pool.clone(),
    };
    if cfg.include_originals {
        out.images.extend(ds.images.iter().cloned());
        out.annotations.extend(ds.annotations.iter().cloned());
    }

    let mut summary = AugmentSummary::default();
    let mut records = Vec::new();
    let mut results = results.into_iter();
    for copy in 0..cfg.copies {
        let block = block_of(copy);
        for image in &ds.images {
            let result = results.next().expect("one result per task");
            summary.instances_visited += result.visited;
            records.extend(result.records);
            out.images.push(DatasetImage {
                id: image.id + block * renumber.image_stride,
                file_name: if block == 0 {
                    image.file_name.clone()
                } else {
                    copy_file_name(&image.file_name, copy)
                },
                raster: result.raster,
                extra: image.extra.clone(),
            });
        }
        out.annotations.extend(ds.annotations.iter().map(|a| Annotation {
            id: a.id + block * renumber.annotation_stride,
            image_id: a.image_id + block * renumber.image_stride,
            ..a.clone()
        }));
    }

    records.sort_by_key(|r| (r.copy, r.source_image_id, r.annotation_id));
    summary.augmented = records.len() as u64;
    summary.skipped = summary.instances_visited - summary.augmented;
    summary.clamped = records.iter().filter(|r| r.clamped).count() as u64;
    summary.fallbacks = records.iter().filter(|r| r.fallback).count() as u64;

    Ok((
        out,
        AugmentReport {
            config: cfg.clone(),
            summary,
            records,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{BinaryGrid, Segmentation};
    use crate::raster::BitDepth;

    fn instance(width: u32, height: u32, bbox: BoundingBox, target: BoundingBox) -> Annotation {
        let mut mask = BinaryGrid::zeros(width as usize, height as usize);
        for y in target.y..target.y + target.h {
            for x in target.x..target.x + target.w {
                mask.set(x as usize, y as usize, true);
            }
        }
        Annotation {
            id: 1,
            image_id: 1,
            bbox,
            mask,
            segmentation: Segmentation::Polygons(vec![]),
            category_id: 1,
            extra: Default::default(),
        }
    }

    fn noisy(width: u32, height: u32, lo: u16, hi: u16, seed: u64) -> ImageRaster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..width * height).map(|_| rng.random_range(lo..=hi)).collect();
        ImageRaster::new(width, height, BitDepth::Eight, data).unwrap()
    }

    #[test]
    fn none_is_identity() {
        let mut raster = noisy(32, 32, 0, 255, 1);
        let before = raster.clone();
        let ann = instance(32, 32, BoundingBox::new(4, 4, 20, 20), BoundingBox::new(8, 8, 8, 8));
        let cfg = AugmentConfig {
            method: Method::None,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(augment_instance(&mut raster, &ann, &cfg, &[], &mut rng)
            .unwrap()
            .is_none());
        assert_eq!(raster, before);
    }

    #[test]
    fn cpil_touches_only_rect_and_uses_context_levels() {
        let pool = vec![noisy(64, 64, 0, 255, 2)];
        let ann = instance(48, 48, BoundingBox::new(8, 8, 30, 30), BoundingBox::new(14, 14, 16, 16));
        let cfg = AugmentConfig::default();
        for seed in 0..50 {
            let mut raster = noisy(48, 48, 100, 120, 3);
            let before = raster.clone();
            let context: std::collections::HashSet<u16> = {
                let sub = before.crop(&ann.bbox).unwrap();
                let mc = ann.mask.crop(&ann.bbox).unwrap();
                context_pixels(&sub, &mc, 256).unwrap().values().iter().copied().collect()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = augment_instance(&mut raster, &ann, &cfg, &pool, &mut rng)
                .unwrap()
                .unwrap();
            let abs = out.rect.absolute(&ann.bbox);
            for y in 0..48 {
                for x in 0..48 {
                    let inside = x >= abs.x && x < abs.x + abs.w && y >= abs.y && y < abs.y + abs.h;
                    if inside {
                        assert!(context.contains(&raster.get(x, y)));
                    } else {
                        assert_eq!(raster.get(x, y), before.get(x, y));
                    }
                }
            }
        }
    }

    #[test]
    fn full_mask_falls_back_to_raw_patch() {
        let pool = vec![noisy(16, 16, 0, 255, 4)];
        let bbox = BoundingBox::new(2, 2, 10, 10);
        let ann = instance(16, 16, bbox, bbox);
        let mut raster = noisy(16, 16, 0, 255, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let out = augment_instance(&mut raster, &ann, &AugmentConfig::default(), &pool, &mut rng)
            .unwrap()
            .unwrap();
        assert!(out.fallback);
        let src = out.patch_source.unwrap();
        let abs = out.rect.absolute(&bbox);
        for dy in 0..abs.h {
            for dx in 0..abs.w {
                assert_eq!(
                    raster.get(abs.x + dx, abs.y + dy),
                    pool[0].get(src.x + dx, src.y + dy)
                );
            }
        }
    }

    #[test]
    fn zero_probability_skips_every_method() {
        let pool = vec![noisy(32, 32, 0, 255, 7)];
        let ann = instance(32, 32, BoundingBox::new(4, 4, 20, 20), BoundingBox::new(8, 8, 8, 8));
        for method in [Method::Cpil, Method::Re, Method::Dbi, Method::None] {
            let mut raster = noisy(32, 32, 0, 255, 8);
            let before = raster.clone();
            let cfg = AugmentConfig {
                method,
                apply_prob: 0.0,
                ..Default::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            assert!(augment_instance(&mut raster, &ann, &cfg, &pool, &mut rng)
                .unwrap()
                .is_none());
            assert_eq!(raster, before);
        }
    }

    #[test]
    fn config_validation() {
        let bad = [
            AugmentConfig { apply_prob: 1.5, ..Default::default() },
            AugmentConfig { copies: 0, ..Default::default() },
            AugmentConfig { workers: 0, ..Default::default() },
            AugmentConfig { area_ratio: RatioRange { lo: 0.5, hi: 0.1 }, ..Default::default() },
            AugmentConfig { area_ratio: RatioRange { lo: 0.5, hi: 1.0 }, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().unwrap_err().is_config(), "{cfg:?}");
        }
        AugmentConfig::default().validate().unwrap();
    }

    #[test]
    fn cpil_without_pool_fails_before_work() {
        let ds = Dataset::default();
        let err = augment_dataset(&ds, &AugmentConfig::default()).unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn method_parsing() {
        assert_eq!("CPIL".parse::<Method>().unwrap(), Method::Cpil);
        assert_eq!(Method::Dbi.to_string(), "dbi");
        assert!("mixup".parse::<Method>().unwrap_err().is_config());
    }

    #[test]
    fn task_seeds_differ_per_copy_and_image() {
        let a = task_seed(1, 0, 0);
        assert_ne!(a, task_seed(1, 1, 0));
        assert_ne!(a, task_seed(1, 0, 1));
        assert_ne!(a, task_seed(2, 0, 0));
    }

    #[test]
    fn copy_names() {
        assert_eq!(copy_file_name("P0001.png", 2), "P0001_aug2.png");
        assert_eq!(copy_file_name("sub/x.png", 0), "sub/x_aug0.png");
    }
}
