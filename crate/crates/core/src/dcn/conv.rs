use crate::error::{Error, Result};

use super::{bilinear_taps, Tensor};

/// Stride and symmetric zero padding of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
}

impl Default for ConvGeometry {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
        }
    }
}

impl ConvGeometry {
    pub fn output_size(&self, h: usize, w: usize, kh: usize, kw: usize) -> Result<(usize, usize)> {
        if self.stride == 0 {
            return Err(Error::Contract("stride must be at least 1".into()));
        }
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if kh == 0 || kw == 0 || ph < kh || pw < kw {
            return Err(Error::Contract(format!(
                "kernel {kh}x{kw} does not fit padded input {ph}x{pw}"
            )));
        }
        Ok(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }
}

struct Shapes {
    channels: usize,
    height: usize,
    width: usize,
    out_channels: usize,
    kh: usize,
    kw: usize,
    out_h: usize,
    out_w: usize,
}

fn check_shapes(
    input: &Tensor,
    weight: &Tensor,
    offsets: &Tensor,
    geom: ConvGeometry,
) -> Result<Shapes> {
    let (channels, height, width) = input.dims3("input")?;
    let (out_channels, in_channels, kh, kw) = weight.dims4("weight")?;
    if in_channels != channels {
        return Err(Error::Contract(format!(
            "weight in_channels {in_channels} != input channels {channels}"
        )));
    }
    let (out_h, out_w) = geom.output_size(height, width, kh, kw)?;
    let expected = [2 * kh * kw, out_h, out_w];
    if offsets.shape() != expected {
        for (dim, (got, want)) in ["offset channels", "output height", "output width"]
            .iter()
            .zip(offsets.shape().iter().zip(expected))
        {
            if *got != want {
                return Err(Error::Contract(format!(
                    "offsets {dim} is {got}, expected {want} (offsets shape {:?})",
                    offsets.shape()
                )));
            }
        }
        return Err(Error::Contract(format!(
            "offsets shape {:?}, expected {expected:?}",
            offsets.shape()
        )));
    }
    Ok(Shapes {
        channels,
        height,
        width,
        out_channels,
        kh,
        kw,
        out_h,
        out_w,
    })
}

/// Visit every sampling position `(tap, oy, ox, row, col)` of the kernel grid
/// displaced by its offsets.
fn for_each_sample(
    s: &Shapes,
    offsets: &Tensor,
    geom: ConvGeometry,
    mut f: impl FnMut(usize, usize, usize, f64, f64),
) {
    let out_hw = s.out_h * s.out_w;
    let off = offsets.data();
    for ki in 0..s.kh {
        for kj in 0..s.kw {
            let tap = ki * s.kw + kj;
            let d_row = &off[2 * tap * out_hw..(2 * tap + 1) * out_hw];
            let d_col = &off[(2 * tap + 1) * out_hw..(2 * tap + 2) * out_hw];
            for oy in 0..s.out_h {
                for ox in 0..s.out_w {
                    let p = oy * s.out_w + ox;
                    let row = (oy * geom.stride + ki) as f64 - geom.padding as f64 + d_row[p];
                    let col = (ox * geom.stride + kj) as f64 - geom.padding as f64 + d_col[p];
                    f(tap, oy, ox, row, col);
                }
            }
        }
    }
}

/// Deformable convolution: each output sums `W(tap) * X(p + tap + offset)`
/// over kernel taps and input channels.
///
/// * `input`: `(C, H, W)`
/// * `weight`: `(O, C, KH, KW)`
/// * `offsets`: `(2*KH*KW, OH, OW)`; channel `2k` is the row offset and `2k+1`
///   the column offset of tap `k = ki*KW + kj`.
///
/// Returns `(O, OH, OW)`.
pub fn deform_conv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    offsets: &Tensor,
    geom: ConvGeometry,
) -> Result<Tensor> {
    let s = check_shapes(input, weight, offsets, geom)?;
    let mut out = Tensor::zeros(vec![s.out_channels, s.out_h, s.out_w]);
    let (ktaps, out_hw) = (s.kh * s.kw, s.out_h * s.out_w);
    let wd = weight.data();
    let od = out.data_mut();
    for_each_sample(&s, offsets, geom, |tap, oy, ox, row, col| {
        let taps: Vec<_> = bilinear_taps(s.height, s.width, row, col).collect();
        for c in 0..s.channels {
            let plane = input.plane(c);
            let v: f64 = taps.iter().map(|t| t.weight * plane[t.index]).sum();
            for o in 0..s.out_channels {
                od[o * out_hw + oy * s.out_w + ox] += wd[(o * s.channels + c) * ktaps + tap] * v;
            }
        }
    });
    Ok(out)
}

/// Gradients of a scalar loss with respect to each input of
/// [`deform_conv2d_forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub offsets: Tensor,
}

pub fn deform_conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    offsets: &Tensor,
    grad_output: &Tensor,
    geom: ConvGeometry,
) -> Result<ConvGrads> {
    let s = check_shapes(input, weight, offsets, geom)?;
    let expected = [s.out_channels, s.out_h, s.out_w];
    if grad_output.shape() != expected {
        return Err(Error::Contract(format!(
            "grad_output shape {:?}, expected {expected:?}",
            grad_output.shape()
        )));
    }
    let mut d_input = Tensor::zeros(input.shape().to_vec());
    let mut d_weight = Tensor::zeros(weight.shape().to_vec());
    let mut d_offsets = Tensor::zeros(offsets.shape().to_vec());
    let (ktaps, out_hw, in_hw) = (s.kh * s.kw, s.out_h * s.out_w, s.height * s.width);
    let wd = weight.data();
    let gy = grad_output.data();
    {
        let dx = d_input.data_mut();
        let dw = d_weight.data_mut();
        let doff = d_offsets.data_mut();
        for_each_sample(&s, offsets, geom, |tap, oy, ox, row, col| {
            let p = oy * s.out_w + ox;
            let taps: Vec<_> = bilinear_taps(s.height, s.width, row, col).collect();
            let (mut g_row, mut g_col) = (0.0, 0.0);
            for c in 0..s.channels {
                let plane = input.plane(c);
                // upstream gradient reaching the sampled value of channel c
                let mut g = 0.0;
                for o in 0..s.out_channels {
                    let widx = (o * s.channels + c) * ktaps + tap;
                    let go = gy[o * out_hw + p];
                    g += wd[widx] * go;
                    let v: f64 = taps.iter().map(|t| t.weight * plane[t.index]).sum();
                    dw[widx] += go * v;
                }
                for t in &taps {
                    dx[c * in_hw + t.index] += g * t.weight;
                    g_row += g * t.d_row * plane[t.index];
                    g_col += g * t.d_col * plane[t.index];
                }
            }
            doff[2 * tap * out_hw + p] += g_row;
            doff[(2 * tap + 1) * out_hw + p] += g_col;
        });
    }
    Ok(ConvGrads {
        input: d_input,
        weight: d_weight,
        offsets: d_offsets,
    })
}
