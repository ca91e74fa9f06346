//! Verification suite for the deformable kernels.
//!
//! The reference operators here (`standard_conv2d`, `average_roi_pool`) use
//! plain integer indexing and share no code with the deformable path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    bilinear_sample, deform_conv2d_backward, deform_conv2d_forward, deform_roi_pool_backward,
    deform_roi_pool_forward, grad_check, ConvGeometry, GradCheckReport, Roi, Tensor,
};

pub const ZERO_OFFSET_TOL: f64 = 1e-12;
pub const LINEARITY_TOL: f64 = 1e-12;
pub const GRAD_REL_TOL: f64 = 1e-4;
pub const FD_EPS: f64 = 1e-5;

/// Plain cross-correlation with zero padding.
pub fn standard_conv2d(input: &Tensor, weight: &Tensor, geom: ConvGeometry) -> Tensor {
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (c_out, _, kh, kw) = (
        weight.shape()[0],
        weight.shape()[1],
        weight.shape()[2],
        weight.shape()[3],
    );
    let out_h = (h + 2 * geom.padding - kh) / geom.stride + 1;
    let out_w = (w + 2 * geom.padding - kw) / geom.stride + 1;
    let x = input.data();
    let k = weight.data();
    let mut y = vec![0.0; c_out * out_h * out_w];
    for o in 0..c_out {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut acc = 0.0;
                for c in 0..c_in {
                    for ki in 0..kh {
                        for kj in 0..kw {
                            let r = (oy * geom.stride + ki) as i64 - geom.padding as i64;
                            let q = (ox * geom.stride + kj) as i64 - geom.padding as i64;
                            if r < 0 || q < 0 || r >= h as i64 || q >= w as i64 {
                                continue;
                            }
                            acc += k[((o * c_in + c) * kh + ki) * kw + kj]
                                * x[(c * h + r as usize) * w + q as usize];
                        }
                    }
                }
                y[(o * out_h + oy) * out_w + ox] = acc;
            }
        }
    }
    Tensor::new(vec![c_out, out_h, out_w], y).expect("shape computed above")
}

/// Plain average RoI pooling over integer lattice cells.
pub fn average_roi_pool(input: &Tensor, roi: &Roi) -> Tensor {
    let (channels, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let edge = |start: f64, extent: f64, bins: usize, k: usize| {
        (start + k as f64 * extent / bins as f64 + 0.5).floor() as i64
    };
    let mut y = vec![0.0; channels * roi.bins_h * roi.bins_w];
    for c in 0..channels {
        for by in 0..roi.bins_h {
            for bx in 0..roi.bins_w {
                let (r0, r1) = (edge(roi.y, roi.h, roi.bins_h, by), edge(roi.y, roi.h, roi.bins_h, by + 1));
                let (q0, q1) = (edge(roi.x, roi.w, roi.bins_w, bx), edge(roi.x, roi.w, roi.bins_w, bx + 1));
                let count = (r1 - r0).max(0) * (q1 - q0).max(0);
                if count == 0 {
                    continue;
                }
                let mut sum = 0.0;
                for r in r0..r1 {
                    for q in q0..q1 {
                        if r >= 0 && q >= 0 && r < h as i64 && q < w as i64 {
                            sum += input.data()[(c * h + r as usize) * w + q as usize];
                        }
                    }
                }
                y[(c * roi.bins_h + by) * roi.bins_w + bx] = sum / count as f64;
            }
        }
    }
    Tensor::new(vec![channels, roi.bins_h, roi.bins_w], y).expect("shape computed above")
}

/// An offset whose fractional part stays in `[0.1, 0.9]`, well clear of the
/// bilinear kinks at integers.
pub fn non_integer_offset<R: Rng + ?Sized>(rng: &mut R, reach: i32) -> f64 {
    rng.random_range(-reach..=reach) as f64 + rng.random_range(0.1..0.9)
}

#[derive(Debug, Clone)]
pub struct ConvCase {
    pub input: Tensor,
    pub weight: Tensor,
    pub offsets: Tensor,
    pub geom: ConvGeometry,
}

impl ConvCase {
    /// Random shapes; offsets are zero or non-integer.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, zero_offsets: bool) -> Self {
        let channels = rng.random_range(1..=3);
        let out_channels = rng.random_range(1..=3);
        let kh = rng.random_range(1..=3);
        let kw = rng.random_range(1..=3);
        let geom = ConvGeometry {
            stride: rng.random_range(1..=2),
            padding: rng.random_range(0..=1),
        };
        let h = rng.random_range(kh.max(3)..=8);
        let w = rng.random_range(kw.max(3)..=8);
        let (oh, ow) = geom.output_size(h, w, kh, kw).expect("kernel fits");
        let input = Tensor::from_fn(vec![channels, h, w], |_| rng.random_range(-1.0..1.0));
        let weight =
            Tensor::from_fn(vec![out_channels, channels, kh, kw], |_| rng.random_range(-1.0..1.0));
        let offsets = Tensor::from_fn(vec![2 * kh * kw, oh, ow], |_| {
            if zero_offsets {
                0.0
            } else {
                non_integer_offset(rng, 1)
            }
        });
        Self {
            input,
            weight,
            offsets,
            geom,
        }
    }

    pub fn forward(&self) -> Tensor {
        deform_conv2d_forward(&self.input, &self.weight, &self.offsets, self.geom)
            .expect("consistent case")
    }
}

#[derive(Debug, Clone)]
pub struct RoiCase {
    pub input: Tensor,
    pub roi: Roi,
}

impl RoiCase {
    pub fn random<R: Rng + ?Sized>(rng: &mut R, zero_offsets: bool) -> Self {
        let channels = rng.random_range(1..=3);
        let h = rng.random_range(5..=10);
        let w = rng.random_range(5..=10);
        let x = rng.random_range(0.0..w as f64 / 2.0);
        let y = rng.random_range(0.0..h as f64 / 2.0);
        let rw = rng.random_range(1.0..w as f64 - x);
        let rh = rng.random_range(1.0..h as f64 - y);
        let mut roi = Roi::new(x, y, rw, rh, rng.random_range(1..=3), rng.random_range(1..=3));
        if !zero_offsets {
            for off in roi.offsets.iter_mut() {
                *off = (non_integer_offset(rng, 1), non_integer_offset(rng, 1));
            }
        }
        let input = Tensor::from_fn(vec![channels, h, w], |_| rng.random_range(-1.0..1.0));
        Self { input, roi }
    }

    pub fn forward(&self) -> Tensor {
        deform_roi_pool_forward(&self.input, &self.roi)
            .expect("consistent case")
            .output
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Injects a +10% error into the first coordinate's analytic gradient.
fn corrupt(grad: &mut [f64]) {
    if let Some(g) = grad.first_mut() {
        *g = if *g == 0.0 { 1.0 } else { *g * 1.1 };
    }
}

/// Finite-difference checks of `(dX, dW, dOffsets)` for one convolution case.
pub fn check_conv_gradients<R: Rng + ?Sized>(
    case: &ConvCase,
    rng: &mut R,
    inject_fault: bool,
) -> [GradCheckReport; 3] {
    let out_shape = case.forward().shape().to_vec();
    let gy = Tensor::from_fn(out_shape, |_| rng.random_range(-1.0..1.0));
    let grads = deform_conv2d_backward(&case.input, &case.weight, &case.offsets, &gy, case.geom)
        .expect("consistent case");
    let loss = |x: &Tensor, w: &Tensor, off: &Tensor| {
        dot(
            deform_conv2d_forward(x, w, off, case.geom)
                .expect("consistent case")
                .data(),
            gy.data(),
        )
    };
    let with = |t: &Tensor, v: &[f64]| Tensor::new(t.shape().to_vec(), v.to_vec()).unwrap();

    let mut d_input = grads.input.into_data();
    if inject_fault {
        corrupt(&mut d_input);
    }
    [
        grad_check(
            |v| loss(&with(&case.input, v), &case.weight, &case.offsets),
            case.input.data(),
            &d_input,
            FD_EPS,
            GRAD_REL_TOL,
        ),
        grad_check(
            |v| loss(&case.input, &with(&case.weight, v), &case.offsets),
            case.weight.data(),
            grads.weight.data(),
            FD_EPS,
            GRAD_REL_TOL,
        ),
        grad_check(
            |v| loss(&case.input, &case.weight, &with(&case.offsets, v)),
            case.offsets.data(),
            grads.offsets.data(),
            FD_EPS,
            GRAD_REL_TOL,
        ),
    ]
}

/// Finite-difference checks of `(dX, dOffsets)` for one RoI pooling case.
pub fn check_roi_gradients<R: Rng + ?Sized>(
    case: &RoiCase,
    rng: &mut R,
    inject_fault: bool,
) -> [GradCheckReport; 2] {
    let out_shape = case.forward().shape().to_vec();
    let gy = Tensor::from_fn(out_shape, |_| rng.random_range(-1.0..1.0));
    let grads = deform_roi_pool_backward(&case.input, &case.roi, &gy).expect("consistent case");
    let loss = |x: &Tensor, roi: &Roi| {
        dot(
            deform_roi_pool_forward(x, roi)
                .expect("consistent case")
                .output
                .data(),
            gy.data(),
        )
    };
    let flat_offsets: Vec<f64> = case.roi.offsets.iter().flat_map(|&(r, c)| [r, c]).collect();
    let flat_grads: Vec<f64> = grads.offsets.iter().flat_map(|&(r, c)| [r, c]).collect();

    let mut d_input = grads.input.into_data();
    if inject_fault {
        corrupt(&mut d_input);
    }
    [
        grad_check(
            |v| {
                let x = Tensor::new(case.input.shape().to_vec(), v.to_vec()).unwrap();
                loss(&x, &case.roi)
            },
            case.input.data(),
            &d_input,
            FD_EPS,
            GRAD_REL_TOL,
        ),
        grad_check(
            |v| {
                let mut roi = case.roi.clone();
                roi.offsets = v.chunks_exact(2).map(|p| (p[0], p[1])).collect();
                loss(&case.input, &roi)
            },
            &flat_offsets,
            &flat_grads,
            FD_EPS,
            GRAD_REL_TOL,
        ),
    ]
}

#[derive(Debug, Clone, Copy)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Randomized cases for the equivalence and linearity checks.
    pub cases: usize,
    /// Randomized cases for the gradient checks.
    pub grad_cases: usize,
    /// Corrupt one analytic gradient coordinate so the gradient checks must fail.
    pub inject_fault: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            cases: 100,
            grad_cases: 20,
            inject_fault: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed error (absolute or relative, see `name`).
    pub metric: f64,
    pub threshold: f64,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &'static str, metric: f64, threshold: f64, detail: String) -> Self {
        Self {
            name,
            passed: metric < threshold,
            metric,
            threshold,
            detail,
        }
    }
}

fn worked_examples() -> CheckOutcome {
    let mut worst: f64 = 0.0;
    let plane = [1.0, 2.0, 3.0, 4.0];
    worst = worst.max((bilinear_sample(&plane, 2, 2, 0.5, 0.5) - 2.5).abs());
    worst = worst.max((bilinear_sample(&plane, 2, 2, 0.0, 0.0) - 1.0).abs());
    worst = worst.max((bilinear_sample(&plane, 2, 2, 0.0, -0.5) - 0.5).abs());

    let ramp = Tensor::from_fn(vec![1, 3, 3], |i| (i % 3) as f64);
    let weight = Tensor::new(vec![1, 1, 1, 1], vec![2.0]).unwrap();
    let mut offsets = Tensor::zeros(vec![2, 3, 3]);
    offsets.data_mut()[9 + 4] = 0.5;
    let y = deform_conv2d_forward(&ramp, &weight, &offsets, ConvGeometry::default()).unwrap();
    worst = worst.max((y.data()[4] - 3.0).abs());

    let x = Tensor::from_fn(vec![1, 4, 4], |i| i as f64);
    let q = deform_roi_pool_forward(&x, &Roi::new(0.0, 0.0, 4.0, 4.0, 2, 2)).unwrap();
    for (got, want) in q.output.data().iter().zip([2.5, 4.5, 10.5, 12.5]) {
        worst = worst.max((got - want).abs());
    }
    let g = deform_roi_pool_forward(&x, &Roi::new(0.0, 0.0, 4.0, 4.0, 1, 1)).unwrap();
    worst = worst.max((g.output.data()[0] - 7.5).abs());

    CheckOutcome {
        name: "worked examples (exact)",
        passed: worst == 0.0,
        metric: worst,
        threshold: 0.0,
        detail: "bilinear 2.5/1/0.5, ramp conv 3.0, quadrant pool, global mean 7.5".into(),
    }
}

fn conv_zero_offset(rng: &mut ChaCha8Rng, cases: usize) -> CheckOutcome {
    let worst = (0..cases)
        .map(|_| {
            let case = ConvCase::random(rng, true);
            case.forward()
                .max_abs_diff(&standard_conv2d(&case.input, &case.weight, case.geom))
        })
        .fold(0.0, f64::max);
    CheckOutcome::new(
        "deform conv == standard conv at zero offsets (abs)",
        worst,
        ZERO_OFFSET_TOL,
        format!("{cases} cases"),
    )
}

fn roi_zero_offset(rng: &mut ChaCha8Rng, cases: usize) -> CheckOutcome {
    let worst = (0..cases)
        .map(|_| {
            let case = RoiCase::random(rng, true);
            case.forward()
                .max_abs_diff(&average_roi_pool(&case.input, &case.roi))
        })
        .fold(0.0, f64::max);
    CheckOutcome::new(
        "deform RoI pool == average RoI pool at zero offsets (abs)",
        worst,
        ZERO_OFFSET_TOL,
        format!("{cases} cases"),
    )
}

fn linearity(rng: &mut ChaCha8Rng, cases: usize) -> CheckOutcome {
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let case = ConvCase::random(rng, false);
        let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let other_x = Tensor::from_fn(case.input.shape().to_vec(), |_| rng.random_range(-1.0..1.0));
        let other_w = Tensor::from_fn(case.weight.shape().to_vec(), |_| rng.random_range(-1.0..1.0));
        let mix = |p: &Tensor, q: &Tensor| {
            Tensor::from_fn(p.shape().to_vec(), |i| a * p.data()[i] + b * q.data()[i])
        };
        let f = |x: &Tensor, w: &Tensor| {
            deform_conv2d_forward(x, w, &case.offsets, case.geom).unwrap()
        };
        let y1 = case.forward();
        worst = worst.max(
            f(&mix(&case.input, &other_x), &case.weight)
                .max_abs_diff(&mix(&y1, &f(&other_x, &case.weight))),
        );
        worst = worst.max(
            f(&case.input, &mix(&case.weight, &other_w))
                .max_abs_diff(&mix(&y1, &f(&case.input, &other_w))),
        );
    }
    CheckOutcome::new(
        "linearity in input and weight (abs)",
        worst,
        LINEARITY_TOL,
        format!("{cases} cases"),
    )
}

fn constant_field(rng: &mut ChaCha8Rng, cases: usize) -> CheckOutcome {
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for _ in 0..cases {
        let mut case = ConvCase::random(rng, false);
        case.geom.padding = 0;
        let (c, h, w) = case.input.dims3("input").unwrap();
        let (o, _, kh, kw) = case.weight.dims4("weight").unwrap();
        let Ok((oh, ow)) = case.geom.output_size(h, w, kh, kw) else {
            continue;
        };
        case.offsets = Tensor::from_fn(vec![2 * kh * kw, oh, ow], |_| rng.random_range(-0.45..0.45));
        let level = rng.random_range(-3.0..3.0);
        case.input = Tensor::from_fn(vec![c, h, w], |_| level);
        let y = case.forward();
        let out_hw = oh * ow;
        for oy in 0..oh {
            for ox in 0..ow {
                let interior = (0..kh * kw).all(|tap| {
                    let p = oy * ow + ox;
                    let r = (oy * case.geom.stride + tap / kw) as f64 + case.offsets.data()[2 * tap * out_hw + p];
                    let q = (ox * case.geom.stride + tap % kw) as f64 + case.offsets.data()[(2 * tap + 1) * out_hw + p];
                    r >= 0.0 && q >= 0.0 && r <= (h - 1) as f64 && q <= (w - 1) as f64
                });
                if !interior {
                    continue;
                }
                for oc in 0..o {
                    let wsum: f64 = case.weight.data()[oc * c * kh * kw..(oc + 1) * c * kh * kw].iter().sum();
                    worst = worst.max((y.data()[oc * out_hw + oy * ow + ox] - level * wsum).abs());
                    checked += 1;
                }
            }
        }
        let roi_case = RoiCase::random(rng, true);
        let (rc, rh, rw) = roi_case.input.dims3("input").unwrap();
        let flat = Tensor::from_fn(vec![rc, rh, rw], |_| level);
        let mut roi = roi_case.roi.clone();
        for off in roi.offsets.iter_mut() {
            *off = (rng.random_range(-0.45..0.45), rng.random_range(-0.45..0.45));
        }
        let cells_r = super::bin_edges(roi.y, roi.h, roi.bins_h);
        let cells_c = super::bin_edges(roi.x, roi.w, roi.bins_w);
        let out = deform_roi_pool_forward(&flat, &roi).unwrap();
        for (by, r) in cells_r.iter().enumerate() {
            for (bx, q) in cells_c.iter().enumerate() {
                let (dr, dc) = roi.offsets[by * roi.bins_w + bx];
                let interior = !r.is_empty()
                    && !q.is_empty()
                    && r.start as f64 + dr >= 0.0
                    && q.start as f64 + dc >= 0.0
                    && (r.end - 1) as f64 + dr <= (rh - 1) as f64
                    && (q.end - 1) as f64 + dc <= (rw - 1) as f64;
                if interior {
                    for ch in 0..rc {
                        let v = out.output.data()[(ch * roi.bins_h + by) * roi.bins_w + bx];
                        worst = worst.max((v - level).abs());
                        checked += 1;
                    }
                }
            }
        }
    }
    CheckOutcome::new(
        "constant input gives constant x weight sum (abs)",
        worst,
        LINEARITY_TOL,
        format!("{checked} interior outputs"),
    )
}

fn conv_gradients(rng: &mut ChaCha8Rng, cases: usize, inject_fault: bool) -> CheckOutcome {
    let mut worst: Option<(GradCheckReport, &'static str)> = None;
    for _ in 0..cases {
        let case = ConvCase::random(rng, false);
        let reports = check_conv_gradients(&case, rng, inject_fault);
        for (r, what) in reports.into_iter().zip(["dX", "dW", "dOffsets"]) {
            if worst.as_ref().is_none_or(|(w, _)| r.max_rel_error > w.max_rel_error) {
                worst = Some((r, what));
            }
        }
    }
    let (r, what) = worst.expect("at least one case");
    CheckOutcome::new(
        "deform conv gradients vs central differences (rel)",
        r.max_rel_error,
        GRAD_REL_TOL,
        format!(
            "{cases} cases; worst {what}[{}]: analytic {:.6e}, numeric {:.6e}",
            r.worst_index, r.analytic, r.numeric
        ),
    )
}

fn roi_gradients(rng: &mut ChaCha8Rng, cases: usize, inject_fault: bool) -> CheckOutcome {
    let mut worst: Option<(GradCheckReport, &'static str)> = None;
    for _ in 0..cases {
        let case = RoiCase::random(rng, false);
        let reports = check_roi_gradients(&case, rng, inject_fault);
        for (r, what) in reports.into_iter().zip(["dX", "dOffsets"]) {
            if worst.as_ref().is_none_or(|(w, _)| r.max_rel_error > w.max_rel_error) {
                worst = Some((r, what));
            }
        }
    }
    let (r, what) = worst.expect("at least one case");
    CheckOutcome::new(
        "deform RoI pool gradients vs central differences (rel)",
        r.max_rel_error,
        GRAD_REL_TOL,
        format!(
            "{cases} cases; worst {what}[{}]: analytic {:.6e}, numeric {:.6e}",
            r.worst_index, r.analytic, r.numeric
        ),
    )
}

fn roi_mass_conservation(rng: &mut ChaCha8Rng, cases: usize) -> CheckOutcome {
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let mut case = RoiCase::random(rng, true);
        // keep every lattice sample on the plane so no mass is lost to padding
        let (_, h, w) = case.input.dims3("input").unwrap();
        case.roi.x = case.roi.x.min(w as f64 - case.roi.w);
        case.roi.y = case.roi.y.min(h as f64 - case.roi.h);
        let out = deform_roi_pool_forward(&case.input, &case.roi).unwrap();
        let gy = Tensor::from_fn(out.output.shape().to_vec(), |_| rng.random_range(-1.0..1.0));
        let g = deform_roi_pool_backward(&case.input, &case.roi, &gy).unwrap();
        let nbins = case.roi.bins_h * case.roi.bins_w;
        let expected: f64 = gy
            .data()
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let bin = i % nbins;
                !out.empty_bins.contains(&(bin / case.roi.bins_w, bin % case.roi.bins_w))
            })
            .map(|(_, v)| v)
            .sum();
        let total: f64 = g.input.data().iter().sum();
        worst = worst.max((total - expected).abs());
    }
    CheckOutcome::new(
        "RoI pool adjoint: sum(dX) == sum(dY) at zero offsets (abs)",
        worst,
        LINEARITY_TOL,
        format!("{cases} cases"),
    )
}

/// Run every kernel check and return one outcome per check.
pub fn run_suite(opts: &SuiteOptions) -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    vec![
        worked_examples(),
        conv_zero_offset(&mut rng, opts.cases),
        roi_zero_offset(&mut rng, opts.cases),
        linearity(&mut rng, opts.cases),
        constant_field(&mut rng, opts.cases),
        roi_mass_conservation(&mut rng, opts.cases),
        conv_gradients(&mut rng, opts.grad_cases, opts.inject_fault),
        roi_gradients(&mut rng, opts.grad_cases, opts.inject_fault),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let opts = SuiteOptions {
            cases: 30,
            grad_cases: 5,
            ..Default::default()
        };
        for outcome in run_suite(&opts) {
            assert!(outcome.passed, "{outcome:?}");
        }
    }

    #[test]
    fn injected_fault_is_caught() {
        let opts = SuiteOptions {
            cases: 2,
            grad_cases: 2,
            inject_fault: true,
            ..Default::default()
        };
        let outcomes = run_suite(&opts);
        assert!(outcomes
            .iter()
            .filter(|o| o.name.contains("gradients"))
            .all(|o| !o.passed));
    }
}
