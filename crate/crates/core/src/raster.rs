//! Single-channel intensity rasters and their PNG encoding.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma};
use serde::{Deserialize, Serialize};

use crate::dataset::BoundingBox;
use crate::error::{Error, Result};

/// Bits per sample. SAR amplitude products ship as 8- or 16-bit grayscale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BitDepth {
    #[serde(rename = "8")]
    Eight,
    #[serde(rename = "16")]
    Sixteen,
}

impl BitDepth {
    pub fn bits(self) -> u32 {
        match self {
            BitDepth::Eight => 8,
            BitDepth::Sixteen => 16,
        }
    }

    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            8 => Ok(BitDepth::Eight),
            16 => Ok(BitDepth::Sixteen),
            other => Err(Error::Config(format!(
                "unsupported bit depth {other}, expected 8 or 16"
            ))),
        }
    }

    /// Largest representable intensity, `2^bits - 1`.
    pub fn max_level(self) -> u16 {
        match self {
            BitDepth::Eight => u8::MAX as u16,
            BitDepth::Sixteen => u16::MAX,
        }
    }

    /// Number of distinct levels, `2^bits`.
    pub fn level_count(self) -> usize {
        self.max_level() as usize + 1
    }
}

/// A dense row-major `width x height` grid of intensities with no depth
/// attached. Used for sub-images cropped out of a raster and for noise
/// patches before they are written back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntensityGrid {
    width: usize,
    height: usize,
    data: Vec<u16>,
}

/// The pixels of a raster inside one bounding box.
pub type SubImage = IntensityGrid;

/// A background window sized to an erasure rectangle.
pub type NoisePatch = IntensityGrid;

impl IntensityGrid {
    pub fn new(width: usize, height: usize, data: Vec<u16>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Contract(format!(
                "grid data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u16) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Build from nested rows; every row must have the same length.
    pub fn from_rows(rows: &[&[u16]]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Contract("ragged rows".into()));
        }
        Self::new(width, height, rows.concat())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u16] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u16> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u16) {
        self.data[y * self.width + x] = value;
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u16]> {
        self.data.chunks(self.width.max(1)).take(self.height)
    }
}

/// A grayscale SAR image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRaster {
    width: u32,
    height: u32,
    depth: BitDepth,
    data: Vec<u16>,
}

impl ImageRaster {
    pub fn new(width: u32, height: u32, depth: BitDepth, data: Vec<u16>) -> Result<Self> {
        let expected = width as usize * height as usize;
        if data.len() != expected {
            return Err(Error::Contract(format!(
                "raster data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        let max = depth.max_level();
        if let Some(v) = data.iter().find(|&&v| v > max) {
            return Err(Error::Contract(format!(
                "value {v} exceeds {}-bit range",
                depth.bits()
            )));
        }
        Ok(Self {
            width,
            height,
            depth,
            data,
        })
    }

    pub fn zeros(width: u32, height: u32, depth: BitDepth) -> Self {
        Self {
            width,
            height,
            depth,
            data: vec![0; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn depth(&self) -> BitDepth {
        self.depth
    }

    pub fn max_level(&self) -> u16 {
        self.depth.max_level()
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u16 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    /// Writes one pixel. Values above the depth's range are clamped.
    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: u16) {
        let idx = y as usize * self.width as usize + x as usize;
        self.data[idx] = value.min(self.depth.max_level());
    }

    /// Copy of the pixels under `bbox`.
    pub fn crop(&self, bbox: &BoundingBox) -> Result<SubImage> {
        bbox.check_within(self.width, self.height)
            .map_err(Error::Contract)?;
        let (x0, y0) = (bbox.x as usize, bbox.y as usize);
        let (w, h) = (bbox.w as usize, bbox.h as usize);
        let stride = self.width as usize;
        let mut data = Vec::with_capacity(w * h);
        for row in y0..y0 + h {
            data.extend_from_slice(&self.data[row * stride + x0..row * stride + x0 + w]);
        }
        IntensityGrid::new(w, h, data)
    }

    /// Overwrite the window at `(x, y)` with `grid`, clamping to the depth range.
    pub fn paste(&mut self, x: u32, y: u32, grid: &IntensityGrid) -> Result<()> {
        if x as usize + grid.width() > self.width as usize
            || y as usize + grid.height() > self.height as usize
        {
            return Err(Error::Contract(format!(
                "{}x{} grid at ({x},{y}) does not fit {}x{} raster",
                grid.width(),
                grid.height(),
                self.width,
                self.height
            )));
        }
        for (dy, row) in grid.rows().enumerate() {
            for (dx, &v) in row.iter().enumerate() {
                self.set(x + dx as u32, y + dy as u32, v);
            }
        }
        Ok(())
    }

    pub fn decode_png(path: &Path) -> Result<Self> {
        let img = image::ImageReader::open(path)
            .map_err(|e| Error::io(path, e))?
            .with_guessed_format()
            .map_err(|e| Error::io(path, e))?
            .decode()
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        let (width, height) = (img.width(), img.height());
        match img {
            DynamicImage::ImageLuma8(buf) => Self::new(
                width,
                height,
                BitDepth::Eight,
                buf.into_raw().into_iter().map(u16::from).collect(),
            ),
            DynamicImage::ImageLuma16(buf) => {
                Self::new(width, height, BitDepth::Sixteen, buf.into_raw())
            }
            other => Err(Error::Image {
                path: path.to_path_buf(),
                message: format!(
                    "expected single-channel grayscale, found {:?}",
                    other.color()
                ),
            }),
        }
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let to_err = |e: image::ImageError| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        match self.depth {
            BitDepth::Eight => {
                let raw: Vec<u8> = self.data.iter().map(|&v| v as u8).collect();
                ImageBuffer::<Luma<u8>, _>::from_raw(self.width, self.height, raw)
                    .expect("length checked at construction")
                    .save_with_format(path, ImageFormat::Png)
                    .map_err(to_err)
            }
            BitDepth::Sixteen => {
                ImageBuffer::<Luma<u16>, _>::from_raw(self.width, self.height, self.data.clone())
                    .expect("length checked at construction")
                    .save_with_format(path, ImageFormat::Png)
                    .map_err(to_err)
            }
        }
    }
}

/// Load a raster from a PNG file. Only 8- and 16-bit grayscale is accepted.
pub fn read_raster(path: &Path) -> Result<ImageRaster> {
    ImageRaster::decode_png(path)
}

pub fn write_raster(raster: &ImageRaster, path: &Path) -> Result<()> {
    raster.write_png(path)
}
