//! Annotated SAR datasets: COCO-style JSON plus grayscale PNG rasters.
//!
//! On-disk layout:
//!
//! ```text
//! <root>/annotations.json
//! <root>/images/<file_name>
//! <root>/backgrounds/*.png     (ship-free images, optional)
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::mask::{decode_mask, InstanceMask, Segmentation};
use crate::raster::{read_raster, write_raster, ImageRaster};

pub const ANNOTATIONS_FILE: &str = "annotations.json";
pub const IMAGES_DIR: &str = "images";
pub const BACKGROUNDS_DIR: &str = "backgrounds";

/// Axis-aligned box `[x, y, w, h]` with the origin at the upper-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BoundingBox {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    /// Checks `w, h >= 1` and full containment in a `width x height` image.
    pub fn check_within(&self, width: u32, height: u32) -> std::result::Result<(), String> {
        if self.w == 0 || self.h == 0 {
            return Err(format!("bbox {:?} has zero extent", self.to_array()));
        }
        if self.x as u64 + self.w as u64 > width as u64
            || self.y as u64 + self.h as u64 > height as u64
        {
            return Err(format!(
                "bbox {:?} exceeds image bounds {width}x{height}",
                self.to_array()
            ));
        }
        Ok(())
    }

    pub fn to_array(&self) -> [u32; 4] {
        [self.x, self.y, self.w, self.h]
    }

    /// Converts a COCO float box, rounding each coordinate half-up.
    pub fn from_coco(raw: [f64; 4]) -> std::result::Result<Self, String> {
        let mut out = [0u32; 4];
        for (slot, v) in out.iter_mut().zip(raw) {
            let r = (v + 0.5).floor();
            if !r.is_finite() || r < 0.0 || r > u32::MAX as f64 {
                return Err(format!("bbox coordinate {v} out of range"));
            }
            *slot = r as u32;
        }
        Ok(Self::new(out[0], out[1], out[2], out[3]))
    }
}

/// One ship instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    pub bbox: BoundingBox,
    pub mask: InstanceMask,
    /// Encoded form as read from (or to be written to) the annotation file.
    pub segmentation: Segmentation,
    pub category_id: u64,
    /// Any other COCO fields (`area`, `iscrowd`, ...), carried through untouched.
    pub extra: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetImage {
    pub id: u64,
    pub file_name: String,
    pub raster: ImageRaster,
    pub extra: BTreeMap<String, Value>,
}

impl DatasetImage {
    pub fn width(&self) -> u32 {
        self.raster.width()
    }

    pub fn height(&self) -> u32 {
        self.raster.height()
    }
}

/// Images, their instances, and the ship-free background pool.
///
/// Immutable once loaded; the augmentation pipeline produces a new value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub images: Vec<DatasetImage>,
    pub annotations: Vec<Annotation>,
    pub categories: Vec<Value>,
    pub background_pool: Vec<ImageRaster>,
}

impl Dataset {
    pub fn image(&self, id: u64) -> Option<&DatasetImage> {
        self.images.iter().find(|im| im.id == id)
    }

    /// Annotation indices grouped by image id, each group sorted by annotation id.
    pub fn annotations_by_image(&self) -> HashMap<u64, Vec<usize>> {
        let mut map: HashMap<u64, Vec<usize>> = HashMap::new();
        for (i, ann) in self.annotations.iter().enumerate() {
            map.entry(ann.image_id).or_default().push(i);
        }
        for group in map.values_mut() {
            group.sort_by_key(|&i| self.annotations[i].id);
        }
        map
    }

    /// Checks every structural invariant: unique ids, resolvable image ids,
    /// boxes inside their image, masks sized to the image and non-empty
    /// inside the box.
    pub fn validate(&self) -> Result<()> {
        let mut dims = HashMap::new();
        for im in &self.images {
            if dims.insert(im.id, (im.width(), im.height())).is_some() {
                return Err(Error::Contract(format!("duplicate image id {}", im.id)));
            }
        }
        let mut seen = HashSet::new();
        for ann in &self.annotations {
            validate_annotation(ann, &dims, &mut seen)?;
        }
        Ok(())
    }
}

fn validate_annotation(
    ann: &Annotation,
    dims: &HashMap<u64, (u32, u32)>,
    seen: &mut HashSet<u64>,
) -> Result<()> {
    let invalid = |message: String| Error::Validation {
        annotation_id: ann.id,
        message,
    };
    if !seen.insert(ann.id) {
        return Err(invalid("duplicate annotation id".into()));
    }
    let &(w, h) = dims
        .get(&ann.image_id)
        .ok_or_else(|| invalid(format!("unknown image_id {}", ann.image_id)))?;
    ann.bbox.check_within(w, h).map_err(invalid)?;
    if (ann.mask.width(), ann.mask.height()) != (w as usize, h as usize) {
        return Err(invalid(format!(
            "mask is {}x{}, image is {w}x{h}",
            ann.mask.width(),
            ann.mask.height()
        )));
    }
    if ann.mask.crop(&ann.bbox)?.count_ones() == 0 {
        return Err(invalid("mask has no target pixel inside its bbox".into()));
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    #[serde(default)]
    categories: Vec<Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoImage {
    id: u64,
    file_name: String,
    width: u32,
    height: u32,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    #[serde(default = "default_category")]
    category_id: u64,
    bbox: [f64; 4],
    segmentation: Segmentation,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

fn default_category() -> u64 {
    1
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

/// Load a COCO annotation file and decode every referenced image from `images_dir`.
/// The background pool is left empty; see [`load_layout`].
pub fn load_dataset(annotations_path: &Path, images_dir: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(annotations_path).map_err(|e| Error::io(annotations_path, e))?;
    let coco: CocoFile = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: annotations_path.to_path_buf(),
        offset: byte_offset(&text, e.line(), e.column()),
        message: e.to_string(),
    })?;

    let mut images = Vec::with_capacity(coco.images.len());
    let mut dims = HashMap::new();
    for rec in coco.images {
        let path = images_dir.join(&rec.file_name);
        if !path.is_file() {
            return Err(Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "image file missing"),
            ));
        }
        let raster = read_raster(&path)?;
        if (raster.width(), raster.height()) != (rec.width, rec.height) {
            return Err(Error::Image {
                path,
                message: format!(
                    "decoded size {}x{} differs from record {}x{}",
                    raster.width(),
                    raster.height(),
                    rec.width,
                    rec.height
                ),
            });
        }
        if dims.insert(rec.id, (rec.width, rec.height)).is_some() {
            return Err(Error::Contract(format!("duplicate image id {}", rec.id)));
        }
        images.push(DatasetImage {
            id: rec.id,
            file_name: rec.file_name,
            raster,
            extra: rec.extra,
        });
    }

    let mut annotations = Vec::with_capacity(coco.annotations.len());
    let mut seen = HashSet::new();
    for raw in coco.annotations {
        let invalid = |message: String| Error::Validation {
            annotation_id: raw.id,
            message,
        };
        let &(w, h) = dims
            .get(&raw.image_id)
            .ok_or_else(|| invalid(format!("unknown image_id {}", raw.image_id)))?;
        let bbox = BoundingBox::from_coco(raw.bbox).map_err(invalid)?;
        bbox.check_within(w, h).map_err(invalid)?;
        let mask = decode_mask(&raw.segmentation, w, h).map_err(|e| invalid(e.to_string()))?;
        let ann = Annotation {
            id: raw.id,
            image_id: raw.image_id,
            bbox,
            mask,
            segmentation: raw.segmentation,
            category_id: raw.category_id,
            extra: raw.extra,
        };
        validate_annotation(&ann, &dims, &mut seen)?;
        annotations.push(ann);
    }

    Ok(Dataset {
        images,
        annotations,
        categories: coco.categories,
        background_pool: Vec::new(),
    })
}

/// Every `.png` under `dir`, sorted by file name.
pub fn load_backgrounds(dir: &Path) -> Result<Vec<ImageRaster>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .is_some_and(|ext| ext.eq_ignore_ascii_case("png"))
        })
        .collect();
    paths.sort();
    paths.iter().map(|p| read_raster(p)).collect()
}

/// Load `<root>/annotations.json`, `<root>/images/` and, when present, `<root>/backgrounds/`.
pub fn load_layout(root: &Path) -> Result<Dataset> {
    let mut ds = load_dataset(&root.join(ANNOTATIONS_FILE), &root.join(IMAGES_DIR))?;
    let bg = root.join(BACKGROUNDS_DIR);
    if bg.is_dir() {
        ds.background_pool = load_backgrounds(&bg)?;
    }
    Ok(ds)
}

fn to_coco(ds: &Dataset) -> CocoFile {
    CocoFile {
        images: ds
            .images
            .iter()
            .map(|im| CocoImage {
                id: im.id,
                file_name: im.file_name.clone(),
                width: im.width(),
                height: im.height(),
                extra: im.extra.clone(),
            })
            .collect(),
        annotations: ds.annotations.iter().map(annotation_to_coco).collect(),
        categories: ds.categories.clone(),
    }
}

fn annotation_to_coco(ann: &Annotation) -> CocoAnnotation {
    let b = ann.bbox;
    CocoAnnotation {
        id: ann.id,
        image_id: ann.image_id,
        category_id: ann.category_id,
        bbox: [b.x as f64, b.y as f64, b.w as f64, b.h as f64],
        segmentation: ann.segmentation.clone(),
        extra: ann.extra.clone(),
    }
}

/// Canonical JSON text of the annotation list alone.
pub fn annotations_json(annotations: &[Annotation]) -> String {
    let list: Vec<CocoAnnotation> = annotations.iter().map(annotation_to_coco).collect();
    serde_json::to_string_pretty(&list).expect("annotation serialization is infallible")
}

pub fn write_annotations(ds: &Dataset, path: &Path) -> Result<()> {
    let text =
        serde_json::to_string_pretty(&to_coco(ds)).expect("annotation serialization is infallible");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write the full layout under `root`. Background images are written only
/// when `with_backgrounds` is set.
pub fn write_layout(ds: &Dataset, root: &Path, with_backgrounds: bool) -> Result<()> {
    let images = root.join(IMAGES_DIR);
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    for im in &ds.images {
        write_raster(&im.raster, &images.join(&im.file_name))?;
    }
    write_annotations(ds, &root.join(ANNOTATIONS_FILE))?;
    if with_backgrounds && !ds.background_pool.is_empty() {
        let bg = root.join(BACKGROUNDS_DIR);
        fs::create_dir_all(&bg).map_err(|e| Error::io(&bg, e))?;
        for (i, raster) in ds.background_pool.iter().enumerate() {
            write_raster(raster, &bg.join(format!("bg_{i:04}.png")))?;
        }
    }
    Ok(())
}

/// COCO size class by box area: small below 32², large from 96² up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum SizeClass {
    Small,
    Medium,
    Large,
}

impl SizeClass {
    pub fn of(bbox: &BoundingBox) -> Self {
        match bbox.area() {
            a if a < 32 * 32 => SizeClass::Small,
            a if a < 96 * 96 => SizeClass::Medium,
            _ => SizeClass::Large,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SizeClass::Small => "S",
            SizeClass::Medium => "M",
            SizeClass::Large => "L",
        }
    }
}
