//! Erasure rectangle sampling.
//!
//! The rectangle covers `r_S` of the box area with height/width ratio `r_A`:
//! `w_o * h_o = r_S * w * h` and `w_o = h_o / r_A`. It is always placed flush
//! against at least one box edge, since shadows fall toward the outer
//! boundary of a target.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::BoundingBox;
use crate::error::{Error, Result};

pub const DEFAULT_AREA_RATIO: RatioRange = RatioRange { lo: 0.2, hi: 0.4 };
pub const DEFAULT_ASPECT_RATIO: RatioRange = RatioRange { lo: 0.5, hi: 2.0 };
pub const DEFAULT_MAX_RETRIES: u32 = 16;

/// Closed interval `[lo, hi]` with `0 < lo <= hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioRange {
    pub lo: f64,
    pub hi: f64,
}

impl RatioRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        let r = Self { lo, hi };
        r.validate("range")?;
        Ok(r)
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo > 0.0 && self.lo <= self.hi) {
            return Err(Error::Config(format!(
                "{name} [{}, {}] must satisfy 0 < lo <= hi",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    /// Rectangle area over box area.
    pub area_ratio: f64,
    /// Rectangle height over width.
    pub aspect_ratio: f64,
}

/// Draw `(r_S, r_A)` independently and uniformly from their ranges.
pub fn sample_params<R: Rng + ?Sized>(
    rng: &mut R,
    area: RatioRange,
    aspect: RatioRange,
) -> Result<AugmentParams> {
    area.validate("area ratio range")?;
    aspect.validate("aspect ratio range")?;
    if area.hi >= 1.0 {
        return Err(Error::Config(format!(
            "area ratio upper bound {} must be below 1",
            area.hi
        )));
    }
    Ok(AugmentParams {
        area_ratio: area.sample(rng),
        aspect_ratio: aspect.sample(rng),
    })
}

/// Rectangle size before and after rounding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RectDims {
    pub exact_w: f64,
    pub exact_h: f64,
    pub w: u32,
    pub h: u32,
    /// Whether the rounded rectangle fits inside the box.
    pub feasible: bool,
}

fn round_dim(v: f64) -> u32 {
    let r = v.round();
    if r < 1.0 {
        1
    } else if r >= u32::MAX as f64 {
        u32::MAX
    } else {
        r as u32
    }
}

/// Solve the area/aspect constraints for a box: `w_o = sqrt(r_S w h / r_A)`,
/// `h_o = r_A w_o`, then round to the nearest pixel (at least 1).
pub fn rect_dims(bbox: &BoundingBox, params: &AugmentParams) -> RectDims {
    let box_area = bbox.w as f64 * bbox.h as f64;
    let exact_w = (params.area_ratio * box_area / params.aspect_ratio).sqrt();
    let exact_h = params.aspect_ratio * exact_w;
    let (w, h) = (round_dim(exact_w), round_dim(exact_h));
    RectDims {
        exact_w,
        exact_h,
        w,
        h,
        feasible: w <= bbox.w && h <= bbox.h,
    }
}

/// Rectangle relative to the top-left corner of its bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub fn fits_in(&self, bbox: &BoundingBox) -> bool {
        self.x as u64 + self.w as u64 <= bbox.w as u64
            && self.y as u64 + self.h as u64 <= bbox.h as u64
    }

    pub fn flush_edges(&self, bbox: &BoundingBox) -> [bool; 4] {
        [
            self.x == 0,
            self.y == 0,
            self.x + self.w == bbox.w,
            self.y + self.h == bbox.h,
        ]
    }

    pub fn touches_edge(&self, bbox: &BoundingBox) -> bool {
        self.flush_edges(bbox).iter().any(|&b| b)
    }

    /// Same rectangle in image coordinates.
    pub fn absolute(&self, bbox: &BoundingBox) -> BoundingBox {
        BoundingBox::new(bbox.x + self.x, bbox.y + self.y, self.w, self.h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    Left,
    Top,
    Right,
    Bottom,
}

const EDGES: [Edge; 4] = [Edge::Left, Edge::Top, Edge::Right, Edge::Bottom];

/// Place a `w x h` rectangle flush with one uniformly chosen box edge, at a
/// uniform offset along that edge.
pub fn place_rect<R: Rng + ?Sized>(
    rng: &mut R,
    bbox: &BoundingBox,
    (w, h): (u32, u32),
) -> Result<Rect> {
    if w == 0 || h == 0 || w > bbox.w || h > bbox.h {
        return Err(Error::Contract(format!(
            "rect {w}x{h} does not fit box {}x{}",
            bbox.w, bbox.h
        )));
    }
    let (slack_x, slack_y) = (bbox.w - w, bbox.h - h);
    let edge = EDGES[rng.random_range(0..EDGES.len())];
    let (x, y) = match edge {
        Edge::Left => (0, rng.random_range(0..=slack_y)),
        Edge::Right => (slack_x, rng.random_range(0..=slack_y)),
        Edge::Top => (rng.random_range(0..=slack_x), 0),
        Edge::Bottom => (rng.random_range(0..=slack_x), slack_y),
    };
    Ok(Rect { x, y, w, h })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledRect {
    pub rect: Rect,
    pub params: AugmentParams,
    /// Dimensions had to be clamped to the box after all retries failed.
    pub clamped: bool,
    /// Parameter draws used, including the final one.
    pub draws: u32,
}

/// Draw parameters until the rectangle fits (at most `1 + max_retries`
/// draws), clamping the last draw to the box otherwise.
pub fn sample_rect<R: Rng + ?Sized>(
    rng: &mut R,
    bbox: &BoundingBox,
    area: RatioRange,
    aspect: RatioRange,
    max_retries: u32,
) -> Result<SampledRect> {
    let mut draws = 0;
    loop {
        let params = sample_params(rng, area, aspect)?;
        let dims = rect_dims(bbox, &params);
        draws += 1;
        if dims.feasible {
            let rect = place_rect(rng, bbox, (dims.w, dims.h))?;
            return Ok(SampledRect {
                rect,
                params,
                clamped: false,
                draws,
            });
        }
        if draws > max_retries {
            let clamped = (dims.w.min(bbox.w), dims.h.min(bbox.h));
            let rect = place_rect(rng, bbox, clamped)?;
            return Ok(SampledRect {
                rect,
                params,
                clamped: true,
                draws,
            });
        }
    }
}
