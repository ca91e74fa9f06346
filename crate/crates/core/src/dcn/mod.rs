//! Reference deformable convolution and deformable RoI pooling.
//!
//! Everything is double precision and single-threaded so results are
//! bit-reproducible. Fractional sampling positions use bilinear
//! interpolation with zero padding outside the feature plane.

mod conv;
mod gradcheck;
mod io;
mod roi_pool;
pub mod verify;

pub use conv::{deform_conv2d_backward, deform_conv2d_forward, ConvGeometry, ConvGrads};
pub use gradcheck::{grad_check, GradCheckReport, REL_ERROR_FLOOR};
pub use io::{read_tensor, write_tensor};
pub use roi_pool::{
    bin_edges, deform_roi_pool_backward, deform_roi_pool_forward, Roi, RoiGrads, RoiPoolOutput,
};

use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Contract(format!(
                "tensor of shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(channels, height, width)` of a rank-3 tensor.
    pub fn dims3(&self, what: &str) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::Contract(format!(
                "{what} must be rank 3 (channels, height, width), got shape {:?}",
                self.shape
            ))),
        }
    }

    /// `(out_channels, in_channels, kernel_h, kernel_w)` of a rank-4 tensor.
    pub fn dims4(&self, what: &str) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [o, i, kh, kw] => Ok((o, i, kh, kw)),
            _ => Err(Error::Contract(format!(
                "{what} must be rank 4 (out, in, kh, kw), got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Channel `c` of a rank-3 tensor as a flat `h * w` slice.
    pub fn plane(&self, c: usize) -> &[f64] {
        let hw = self.shape[1] * self.shape[2];
        &self.data[c * hw..(c + 1) * hw]
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// One of the (up to) four lattice neighbours of a fractional position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Tap {
    pub index: usize,
    pub weight: f64,
    /// d(weight)/d(row)
    pub d_row: f64,
    /// d(weight)/d(col)
    pub d_col: f64,
}

/// In-bounds bilinear neighbours of `(row, col)` on an `h x w` plane.
///
/// Derivatives are taken with `floor`, i.e. right-derivatives at integer
/// positions.
pub(crate) fn bilinear_taps(h: usize, w: usize, row: f64, col: f64) -> impl Iterator<Item = Tap> {
    let r0 = row.floor();
    let c0 = col.floor();
    let (fr, fc) = (row - r0, col - c0);
    let (r0, c0) = (r0 as i64, c0 as i64);
    let corners = [
        (r0, c0, (1.0 - fr) * (1.0 - fc), -(1.0 - fc), -(1.0 - fr)),
        (r0, c0 + 1, (1.0 - fr) * fc, -fc, 1.0 - fr),
        (r0 + 1, c0, fr * (1.0 - fc), 1.0 - fc, -fr),
        (r0 + 1, c0 + 1, fr * fc, fc, fr),
    ];
    corners
        .into_iter()
        .filter(move |&(r, c, ..)| r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w)
        .map(move |(r, c, weight, d_row, d_col)| Tap {
            index: r as usize * w + c as usize,
            weight,
            d_row,
            d_col,
        })
}

/// Bilinear interpolation of a row-major `h x w` plane at a fractional
/// position. Neighbours outside the plane read as zero.
pub fn bilinear_sample(plane: &[f64], h: usize, w: usize, row: f64, col: f64) -> f64 {
    debug_assert_eq!(plane.len(), h * w);
    bilinear_taps(h, w, row, col)
        .map(|t| t.weight * plane[t.index])
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    const PLANE: [f64; 4] = [1.0, 2.0, 3.0, 4.0];

    #[test]
    fn center_of_four_corners() {
        assert_eq!(bilinear_sample(&PLANE, 2, 2, 0.5, 0.5), 2.5);
    }

    #[test]
    fn lattice_point_is_exact() {
        assert_eq!(bilinear_sample(&PLANE, 2, 2, 0.0, 0.0), 1.0);
        assert_eq!(bilinear_sample(&PLANE, 2, 2, 1.0, 1.0), 4.0);
    }

    #[test]
    fn zero_padding_outside() {
        assert_eq!(bilinear_sample(&PLANE, 2, 2, 0.0, -0.5), 0.5);
        assert_eq!(bilinear_sample(&PLANE, 2, 2, -3.0, 7.0), 0.0);
        assert_eq!(bilinear_sample(&PLANE, 2, 2, 1.5, 1.0), 2.0);
    }

    #[test]
    fn tensor_shape_checks() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::zeros(vec![2, 3]);
        assert!(t.dims3("x").is_err());
    }
}
