use std::ops::Range;

use crate::error::{Error, Result};

use super::{bilinear_taps, Tensor};

/// A region of interest in feature coordinates with a `bins_h x bins_w`
/// pooling grid and one `(row, col)` offset per bin (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct Roi {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub bins_h: usize,
    pub bins_w: usize,
    pub offsets: Vec<(f64, f64)>,
}

impl Roi {
    pub fn new(x: f64, y: f64, w: f64, h: f64, bins_h: usize, bins_w: usize) -> Self {
        Self {
            x,
            y,
            w,
            h,
            bins_h,
            bins_w,
            offsets: vec![(0.0, 0.0); bins_h * bins_w],
        }
    }

    fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.bins_h == 0 || self.bins_w == 0 {
            return Err(Error::Contract("RoI needs at least one bin per axis".into()));
        }
        if !(self.w > 0.0 && self.h > 0.0) {
            return Err(Error::Contract(format!(
                "RoI extent {}x{} must be positive",
                self.w, self.h
            )));
        }
        if self.offsets.len() != self.bins_h * self.bins_w {
            return Err(Error::Contract(format!(
                "RoI has {} offsets for {} bins",
                self.offsets.len(),
                self.bins_h * self.bins_w
            )));
        }
        if self.x >= width as f64
            || self.y >= height as f64
            || self.x + self.w <= 0.0
            || self.y + self.h <= 0.0
        {
            return Err(Error::Contract("RoI does not intersect the feature plane".into()));
        }
        Ok(())
    }
}

fn round_half_up(v: f64) -> i64 {
    (v + 0.5).floor() as i64
}

/// Integer lattice ranges of each of `bins` cells partitioning
/// `[start, start + extent)`; boundary `k` sits at `round(start + k*extent/bins)`.
pub fn bin_edges(start: f64, extent: f64, bins: usize) -> Vec<Range<i64>> {
    let edge = |k: usize| round_half_up(start + k as f64 * extent / bins as f64);
    (0..bins).map(|k| edge(k)..edge(k + 1)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiPoolOutput {
    /// `(C, bins_h, bins_w)`
    pub output: Tensor,
    /// Bins that contained no lattice sample; their output is 0.
    pub empty_bins: Vec<(usize, usize)>,
}

struct Cells {
    rows: Vec<Range<i64>>,
    cols: Vec<Range<i64>>,
}

impl Cells {
    fn of(roi: &Roi) -> Self {
        Self {
            rows: bin_edges(roi.y, roi.h, roi.bins_h),
            cols: bin_edges(roi.x, roi.w, roi.bins_w),
        }
    }

    fn count(&self, by: usize, bx: usize) -> usize {
        let (r, c) = (&self.rows[by], &self.cols[bx]);
        (r.end - r.start).max(0) as usize * (c.end - c.start).max(0) as usize
    }
}

/// Deformable RoI average pooling: each bin averages the input at its
/// lattice points shifted by the bin's offset.
pub fn deform_roi_pool_forward(input: &Tensor, roi: &Roi) -> Result<RoiPoolOutput> {
    let (channels, height, width) = input.dims3("input")?;
    roi.validate(height, width)?;
    let cells = Cells::of(roi);
    let mut output = Tensor::zeros(vec![channels, roi.bins_h, roi.bins_w]);
    let mut empty_bins = Vec::new();
    let nbins = roi.bins_h * roi.bins_w;
    for by in 0..roi.bins_h {
        for bx in 0..roi.bins_w {
            let n = cells.count(by, bx);
            if n == 0 {
                empty_bins.push((by, bx));
                continue;
            }
            let (d_row, d_col) = roi.offsets[by * roi.bins_w + bx];
            for c in 0..channels {
                let plane = input.plane(c);
                let mut acc = 0.0;
                for i in cells.rows[by].clone() {
                    for j in cells.cols[bx].clone() {
                        acc += bilinear_taps(height, width, i as f64 + d_row, j as f64 + d_col)
                            .map(|t| t.weight * plane[t.index])
                            .sum::<f64>();
                    }
                }
                output.data_mut()[c * nbins + by * roi.bins_w + bx] = acc / n as f64;
            }
        }
    }
    Ok(RoiPoolOutput { output, empty_bins })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiGrads {
    pub input: Tensor,
    /// Per-bin `(d/d row offset, d/d col offset)`.
    pub offsets: Vec<(f64, f64)>,
}

pub fn deform_roi_pool_backward(input: &Tensor, roi: &Roi, grad_output: &Tensor) -> Result<RoiGrads> {
    let (channels, height, width) = input.dims3("input")?;
    roi.validate(height, width)?;
    let expected = [channels, roi.bins_h, roi.bins_w];
    if grad_output.shape() != expected {
        return Err(Error::Contract(format!(
            "grad_output shape {:?}, expected {expected:?}",
            grad_output.shape()
        )));
    }
    let cells = Cells::of(roi);
    let nbins = roi.bins_h * roi.bins_w;
    let hw = height * width;
    let mut d_input = Tensor::zeros(input.shape().to_vec());
    let mut d_offsets = vec![(0.0, 0.0); nbins];
    for by in 0..roi.bins_h {
        for bx in 0..roi.bins_w {
            let n = cells.count(by, bx);
            if n == 0 {
                continue;
            }
            let bin = by * roi.bins_w + bx;
            let (d_row, d_col) = roi.offsets[bin];
            for c in 0..channels {
                let g = grad_output.data()[c * nbins + bin] / n as f64;
                if g == 0.0 {
                    continue;
                }
                let plane = input.plane(c);
                for i in cells.rows[by].clone() {
                    for j in cells.cols[bx].clone() {
                        for t in bilinear_taps(height, width, i as f64 + d_row, j as f64 + d_col) {
                            d_input.data_mut()[c * hw + t.index] += g * t.weight;
                            d_offsets[bin].0 += g * t.d_row * plane[t.index];
                            d_offsets[bin].1 += g * t.d_col * plane[t.index];
                        }
                    }
                }
            }
        }
    }
    Ok(RoiGrads {
        input: d_input,
        offsets: d_offsets,
    })
}
