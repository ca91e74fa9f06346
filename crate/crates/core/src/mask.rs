//! Binary instance masks and the COCO segmentation encodings (polygons,
//! uncompressed RLE and the compact string RLE used by pycocotools).

use serde::{Deserialize, Serialize};

use crate::dataset::BoundingBox;
use crate::error::{Error, Result};

/// Row-major binary grid; `1` marks a target pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryGrid {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl BinaryGrid {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Contract(format!(
                "mask data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Contract("mask values must be 0 or 1".into()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.data[y * self.width + x] = on as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

/// Full-image-sized mask of one instance.
pub type InstanceMask = BinaryGrid;

/// The part of an [`InstanceMask`] under a bounding box.
pub type MaskCrop = BinaryGrid;

impl BinaryGrid {
    pub fn crop(&self, bbox: &BoundingBox) -> Result<MaskCrop> {
        bbox.check_within(self.width as u32, self.height as u32)
            .map_err(Error::Contract)?;
        let (x0, y0) = (bbox.x as usize, bbox.y as usize);
        let (w, h) = (bbox.w as usize, bbox.h as usize);
        let mut data = Vec::with_capacity(w * h);
        for row in y0..y0 + h {
            data.extend_from_slice(&self.data[row * self.width + x0..row * self.width + x0 + w]);
        }
        Ok(Self {
            width: w,
            height: h,
            data,
        })
    }

    /// Smallest box containing every set pixel, or `None` for an empty mask.
    pub fn tight_bbox(&self) -> Option<BoundingBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        (x0 != usize::MAX).then(|| {
            BoundingBox::new(
                x0 as u32,
                y0 as u32,
                (x1 - x0 + 1) as u32,
                (y1 - y0 + 1) as u32,
            )
        })
    }
}

/// RLE counts in either JSON form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RleCounts {
    List(Vec<u32>),
    Compressed(String),
}

/// COCO `segmentation` field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Segmentation {
    Polygons(Vec<Vec<f64>>),
    Rle {
        counts: RleCounts,
        /// `[height, width]`, COCO order.
        size: [u32; 2],
    },
}

/// Rasterize a COCO segmentation into a full-image mask.
///
/// Polygons are filled with the even-odd rule on pixel centers; a center
/// lying exactly on an edge counts as inside. Multiple polygons are unioned.
/// RLE is column-major per COCO convention.
pub fn decode_mask(seg: &Segmentation, width: u32, height: u32) -> Result<InstanceMask> {
    match seg {
        Segmentation::Polygons(polys) => {
            if polys.is_empty() {
                return Err(Error::MaskDecode("empty polygon list".into()));
            }
            let mut mask = BinaryGrid::zeros(width as usize, height as usize);
            for flat in polys {
                rasterize_polygon(flat, &mut mask)?;
            }
            Ok(mask)
        }
        Segmentation::Rle { counts, size } => {
            let [h, w] = *size;
            if (h, w) != (height, width) {
                return Err(Error::MaskDecode(format!(
                    "RLE size {h}x{w} (h x w) does not match image {height}x{width}"
                )));
            }
            let counts = match counts {
                RleCounts::List(c) => c.clone(),
                RleCounts::Compressed(s) => rle_from_string(s)?,
            };
            decode_rle(&counts, width as usize, height as usize)
        }
    }
}

fn decode_rle(counts: &[u32], width: usize, height: usize) -> Result<InstanceMask> {
    let n = width * height;
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    if total != n as u64 {
        return Err(Error::MaskDecode(format!(
            "RLE counts sum to {total}, expected {n}"
        )));
    }
    let mut mask = BinaryGrid::zeros(width, height);
    let mut idx = 0usize;
    for (run, &c) in counts.iter().enumerate() {
        let on = run % 2 == 1;
        for k in idx..idx + c as usize {
            if on {
                // column-major index k -> (x = k / h, y = k % h)
                mask.set(k / height, k % height, true);
            }
        }
        idx += c as usize;
    }
    Ok(mask)
}

/// Uncompressed column-major RLE of a mask, starting with a zero run.
pub fn encode_rle(mask: &InstanceMask) -> Vec<u32> {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for x in 0..mask.width() {
        for y in 0..mask.height() {
            let v = mask.get(x, y);
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    counts
}

/// Decode the pycocotools compact RLE string.
pub fn rle_from_string(s: &str) -> Result<Vec<u32>> {
    let bytes = s.as_bytes();
    let mut counts: Vec<i64> = Vec::new();
    let mut p = 0;
    while p < bytes.len() {
        let mut x: i64 = 0;
        let mut k = 0;
        loop {
            let Some(&b) = bytes.get(p) else {
                return Err(Error::MaskDecode("truncated RLE string".into()));
            };
            if !(48..48 + 64).contains(&b) || k >= 13 {
                return Err(Error::MaskDecode(format!("bad RLE character at {p}")));
            }
            let c = (b - 48) as i64;
            x |= (c & 0x1f) << (5 * k);
            p += 1;
            k += 1;
            if c & 0x20 == 0 {
                if c & 0x10 != 0 {
                    x |= -1i64 << (5 * k);
                }
                break;
            }
        }
        if counts.len() > 2 {
            x += counts[counts.len() - 2];
        }
        counts.push(x);
    }
    counts
        .into_iter()
        .map(|c| u32::try_from(c).map_err(|_| Error::MaskDecode(format!("invalid run {c}"))))
        .collect()
}

/// Encode counts as a pycocotools compact RLE string.
pub fn rle_to_string(counts: &[u32]) -> String {
    let mut out = String::new();
    for (i, &c) in counts.iter().enumerate() {
        let mut x = c as i64;
        if i > 2 {
            x -= counts[i - 2] as i64;
        }
        loop {
            let mut c = x & 0x1f;
            x >>= 5;
            let more = if c & 0x10 != 0 { x != -1 } else { x != 0 };
            if more {
                c |= 0x20;
            }
            out.push((c as u8 + 48) as char);
            if !more {
                break;
            }
        }
    }
    out
}

fn rasterize_polygon(flat: &[f64], mask: &mut InstanceMask) -> Result<()> {
    if !flat.len().is_multiple_of(2) {
        return Err(Error::MaskDecode("odd number of polygon coordinates".into()));
    }
    let verts: Vec<(f64, f64)> = flat.chunks_exact(2).map(|p| (p[0], p[1])).collect();
    if verts.len() < 3 {
        return Err(Error::MaskDecode(format!(
            "polygon needs at least 3 vertices, got {}",
            verts.len()
        )));
    }
    let (w, h) = (mask.width(), mask.height());
    let (mut min_x, mut min_y, mut max_x, mut max_y) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for &(x, y) in &verts {
        min_x = min_x.min(x);
        min_y = min_y.min(y);
        max_x = max_x.max(x);
        max_y = max_y.max(y);
    }
    let col_lo = ((min_x - 0.5).ceil().max(0.0)) as usize;
    let row_lo = ((min_y - 0.5).ceil().max(0.0)) as usize;
    let col_hi = ((max_x - 0.5).floor().min(w as f64 - 1.0)).max(-1.0);
    let row_hi = ((max_y - 0.5).floor().min(h as f64 - 1.0)).max(-1.0);
    if col_hi < 0.0 || row_hi < 0.0 {
        return Ok(());
    }
    for row in row_lo..=row_hi as usize {
        for col in col_lo..=col_hi as usize {
            if center_inside(col as f64 + 0.5, row as f64 + 0.5, &verts) {
                mask.set(col, row, true);
            }
        }
    }
    Ok(())
}

fn center_inside(px: f64, py: f64, verts: &[(f64, f64)]) -> bool {
    let n = verts.len();
    let mut inside = false;
    for i in 0..n {
        let (xi, yi) = verts[i];
        let (xj, yj) = verts[(i + n - 1) % n];
        if on_segment(px, py, (xi, yi), (xj, yj)) {
            return true;
        }
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
    }
    inside
}

fn on_segment(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> bool {
    let cross = (b.0 - a.0) * (py - a.1) - (b.1 - a.1) * (px - a.0);
    let len = ((b.0 - a.0).abs() + (b.1 - a.1).abs()).max(1.0);
    cross.abs() <= 1e-9 * len
        && px >= a.0.min(b.0) - 1e-12
        && px <= a.0.max(b.0) + 1e-12
        && py >= a.1.min(b.1) - 1e-12
        && py <= a.1.max(b.1) + 1e-12
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rle(counts: Vec<u32>, h: u32, w: u32) -> Segmentation {
        Segmentation::Rle {
            counts: RleCounts::List(counts),
            size: [h, w],
        }
    }

    #[test]
    fn rle_single_runs() {
        let ones = decode_mask(&rle(vec![0, 4], 2, 2), 2, 2).unwrap();
        assert_eq!(ones.data(), &[1, 1, 1, 1]);
        let zeros = decode_mask(&rle(vec![4], 2, 2), 2, 2).unwrap();
        assert_eq!(zeros.data(), &[0, 0, 0, 0]);
    }

    #[test]
    fn rle_is_column_major() {
        // 2 rows x 3 cols; first column zero, second column ones, third zero
        let m = decode_mask(&rle(vec![2, 2, 2], 2, 3), 3, 2).unwrap();
        assert_eq!(m.data(), &[0, 1, 0, 0, 1, 0]);
    }

    #[test]
    fn rle_sum_mismatch() {
        assert!(matches!(
            decode_mask(&rle(vec![1, 2], 2, 2), 2, 2),
            Err(Error::MaskDecode(_))
        ));
    }

    #[test]
    fn square_polygon_fills_pixel_centers_inside() {
        let seg = Segmentation::Polygons(vec![vec![0.0, 0.0, 3.0, 0.0, 3.0, 3.0, 0.0, 3.0]]);
        let m = decode_mask(&seg, 4, 4).unwrap();
        // oracle: enumerate the 16 centers against the square [0,3]x[0,3]
        for y in 0..4 {
            for x in 0..4 {
                let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
                let inside = (0.0..=3.0).contains(&cx) && (0.0..=3.0).contains(&cy);
                assert_eq!(m.get(x, y), inside, "pixel ({x},{y})");
            }
        }
        assert_eq!(m.count_ones(), 9);
    }

    #[test]
    fn centers_on_edges_count_inside() {
        // right edge at x = 2.5 passes through centers of column 2
        let seg = Segmentation::Polygons(vec![vec![0.0, 0.0, 2.5, 0.0, 2.5, 2.0, 0.0, 2.0]]);
        let m = decode_mask(&seg, 4, 4).unwrap();
        assert!(m.get(2, 0) && m.get(2, 1));
        assert!(!m.get(3, 0));
    }

    #[test]
    fn polygon_needs_three_vertices() {
        let seg = Segmentation::Polygons(vec![vec![0.0, 0.0, 1.0, 1.0]]);
        assert!(matches!(decode_mask(&seg, 4, 4), Err(Error::MaskDecode(_))));
    }

    #[test]
    fn compressed_string_known_value() {
        // hand-encoded: runs past index 2 are stored as deltas; 2 - 3 = -1 -> 31 + 48 = 'O'
        assert_eq!(rle_to_string(&[5, 3, 1, 2]), "531O");
        assert_eq!(rle_from_string("531O").unwrap(), vec![5, 3, 1, 2]);
        assert_eq!(rle_from_string("414").unwrap(), vec![4, 1, 4]);
    }

    #[test]
    fn tight_bbox_of_block() {
        let mut m = BinaryGrid::zeros(5, 5);
        m.set(1, 2, true);
        m.set(3, 3, true);
        assert_eq!(m.tight_bbox(), Some(BoundingBox::new(1, 2, 3, 2)));
        assert_eq!(BinaryGrid::zeros(2, 2).tight_bbox(), None);
    }

    proptest! {
        #[test]
        fn rle_and_polygon_agree_on_rectangles(
            w in 1u32..24, h in 1u32..24, a in 0u32..24, b in 0u32..24, c in 0u32..24, d in 0u32..24,
        ) {
            let (x0, x1) = (a.min(b) % w, (a.max(b) % w) + 1);
            let (y0, y1) = (c.min(d) % h, (c.max(d) % h) + 1);
            let (x0, x1) = (x0.min(x1 - 1), x1.max(x0 + 1));
            let (y0, y1) = (y0.min(y1 - 1), y1.max(y0 + 1));
            let (xf0, xf1, yf0, yf1) = (x0 as f64, x1 as f64, y0 as f64, y1 as f64);
            let poly = Segmentation::Polygons(vec![vec![xf0, yf0, xf1, yf0, xf1, yf1, xf0, yf1]]);
            let pm = decode_mask(&poly, w, h).unwrap();

            let mut reference = BinaryGrid::zeros(w as usize, h as usize);
            for y in y0..y1 { for x in x0..x1 { reference.set(x as usize, y as usize, true); } }
            let rm = decode_mask(&rle(encode_rle(&reference), h, w), w, h).unwrap();
            prop_assert_eq!(&rm, &reference);

            let agree = pm.data().iter().zip(rm.data()).filter(|(p, r)| p == r).count();
            prop_assert!(agree as f64 >= 0.99 * (w * h) as f64);
        }

        #[test]
        fn rle_string_roundtrip(bits in proptest::collection::vec(any::<bool>(), 1..200)) {
            let n = bits.len();
            let m = BinaryGrid::new(1, n, bits.iter().map(|&b| b as u8).collect()).unwrap();
            let counts = encode_rle(&m);
            prop_assert_eq!(rle_from_string(&rle_to_string(&counts)).unwrap(), counts);
        }
    }
}
