//! 2-d cross-correlation, its transpose, and their gradients.
//!
//! `conv_transpose2d` is implemented as the exact adjoint of `conv2d`:
//! `<conv2d(x, w), y> == <x, conv_transpose2d(y, w)>` holds to rounding for
//! matching shapes, which is what makes the decoder the mirror of the
//! encoder and the gradient checks exact. All loops accumulate in a fixed
//! order so repeated calls are bit-identical.

use crate::error::NnError;
use crate::tensor::{Element, Tensor};

/// `(grad_input, grad_weight, grad_bias)` of a layer.
pub type LayerGrads<E> = (Tensor<E>, Tensor<E>, Tensor<E>);

fn shape_err(context: &'static str, expected: String, actual: String) -> NnError {
    NnError::ShapeMismatch {
        context,
        expected,
        actual,
    }
}

/// Valid output range `[lo, hi)` such that `o*stride + k_off - padding` stays
/// inside `[0, limit)`.
fn out_range(k_off: usize, stride: usize, padding: usize, limit: usize, out_len: usize) -> (usize, usize) {
    let shift = k_off as isize - padding as isize;
    let lo = if shift >= 0 {
        0
    } else {
        ((-shift) as usize).div_ceil(stride)
    };
    let max_in = limit as isize - 1 - shift;
    if max_in < 0 {
        return (0, 0);
    }
    let hi = (max_in as usize / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

fn dims2(weight: &Tensor<impl Element>) -> (usize, usize, usize, usize) {
    let s = weight.shape();
    (s[0], s[1], s[2], s[3])
}

fn check_weight_bias<E: Element>(
    context: &'static str,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
    bias_ch: usize,
) -> Result<(), NnError> {
    if weight.shape().len() != 4 {
        return Err(shape_err(
            context,
            "4-d weight".into(),
            format!("{:?}", weight.shape()),
        ));
    }
    if bias.shape() != [bias_ch] {
        return Err(shape_err(
            context,
            format!("bias [{bias_ch}]"),
            format!("{:?}", bias.shape()),
        ));
    }
    Ok(())
}

/// Output spatial size of a convolution: `floor((in + 2p - k) / stride) + 1`.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Cross-correlation of `input [N, Ci, H, W]` with `weight [Co, Ci, kH, kW]`
/// plus per-channel `bias [Co]`.
pub fn conv2d<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<E>, NnError> {
    assert!(stride >= 1, "stride must be >= 1");
    let (n, ci, h, w) = input.dims4("conv2d input")?;
    let (co_n, wci, kh, kw) = dims2(weight);
    check_weight_bias("conv2d", weight, bias, co_n)?;
    if wci != ci {
        return Err(shape_err(
            "conv2d",
            format!("weight in-channels {ci}"),
            format!("{wci}"),
        ));
    }
    let oh = conv_out_dim(h, kh, stride, padding);
    let ow = conv_out_dim(w, kw, stride, padding);
    let (oh, ow) = match (oh, ow) {
        (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
        _ => {
            return Err(shape_err(
                "conv2d",
                "positive output dims".into(),
                format!("input {h}x{w}, kernel {kh}x{kw}, stride {stride}, padding {padding}"),
            ))
        }
    };

    let x = input.data();
    let wd = weight.data();
    let bd = bias.data();
    let mut out = vec![E::ZERO; n * co_n * oh * ow];

    for ni in 0..n {
        for co in 0..co_n {
            let out_base = (ni * co_n + co) * oh * ow;
            let b = bd[co];
            for v in &mut out[out_base..out_base + oh * ow] {
                *v = b;
            }
            for c in 0..ci {
                let in_base = (ni * ci + c) * h * w;
                for ky in 0..kh {
                    let (oh_lo, oh_hi) = out_range(ky, stride, padding, h, oh);
                    for kx in 0..kw {
                        let (ow_lo, ow_hi) = out_range(kx, stride, padding, w, ow);
                        let wv = wd[((co * ci + c) * kh + ky) * kw + kx];
                        for oy in oh_lo..oh_hi {
                            let iy = oy * stride + ky - padding;
                            let in_row = in_base + iy * w;
                            let out_row = out_base + oy * ow;
                            for ox in ow_lo..ow_hi {
                                let ix = ox * stride + kx - padding;
                                out[out_row + ox] = out[out_row + ox] + x[in_row + ix] * wv;
                            }
                        }
                    }
                }
            }
        }
    }

    Tensor::new(vec![n, co_n, oh, ow], out)
}

/// Adjoint scatter shared by `conv_transpose2d` and the conv input gradient:
/// distributes `src [N, Co, h, w]` through `weight [Co, Ci, kH, kW]` into a
/// buffer of spatial size `out_h x out_w` with `Ci` channels.
fn scatter_adjoint<E: Element>(
    src: &Tensor<E>,
    weight: &Tensor<E>,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
    out: &mut [E],
) {
    let (n, co_n, h, w) = src
        .dims4("scatter_adjoint")
        .expect("checked by callers");
    let (_, ci_n, kh, kw) = dims2(weight);
    let y = src.data();
    let wd = weight.data();

    for ni in 0..n {
        for co in 0..co_n {
            let src_base = (ni * co_n + co) * h * w;
            for c in 0..ci_n {
                let out_base = (ni * ci_n + c) * out_h * out_w;
                for ky in 0..kh {
                    let (h_lo, h_hi) = out_range(ky, stride, padding, out_h, h);
                    for kx in 0..kw {
                        let (w_lo, w_hi) = out_range(kx, stride, padding, out_w, w);
                        let wv = wd[((co * ci_n + c) * kh + ky) * kw + kx];
                        for sy in h_lo..h_hi {
                            let oy = sy * stride + ky - padding;
                            let src_row = src_base + sy * w;
                            let out_row = out_base + oy * out_w;
                            for sx in w_lo..w_hi {
                                let ox = sx * stride + kx - padding;
                                out[out_row + ox] = out[out_row + ox] + y[src_row + sx] * wv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Transposed convolution of `input [N, Ci, h, w]` with
/// `weight [Ci, Co, kH, kW]` plus `bias [Co]`.
///
/// Output spatial size is `stride*(in - 1) + k - 2*padding + output_padding`;
/// `output_padding < stride` selects among the input sizes the matching
/// forward convolution folds together (needed to mirror a stride-2 encoder
/// on even inputs).
pub fn conv_transpose2d<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<Tensor<E>, NnError> {
    assert!(stride >= 1, "stride must be >= 1");
    if output_padding >= stride {
        return Err(NnError::InvalidConfig(format!(
            "output_padding {output_padding} must be < stride {stride}"
        )));
    }
    let (n, ci, h, w) = input.dims4("conv_transpose2d input")?;
    let (wci, co_n, kh, kw) = dims2(weight);
    check_weight_bias("conv_transpose2d", weight, bias, co_n)?;
    if wci != ci {
        return Err(shape_err(
            "conv_transpose2d",
            format!("weight in-channels {ci}"),
            format!("{wci}"),
        ));
    }
    let oh = (stride * (h - 1) + kh + output_padding).checked_sub(2 * padding);
    let ow = (stride * (w - 1) + kw + output_padding).checked_sub(2 * padding);
    let (oh, ow) = match (oh, ow) {
        (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
        _ => {
            return Err(shape_err(
                "conv_transpose2d",
                "positive output dims".into(),
                format!("input {h}x{w}, kernel {kh}x{kw}, stride {stride}, padding {padding}"),
            ))
        }
    };

    let mut out = vec![E::ZERO; n * co_n * oh * ow];
    for ni in 0..n {
        for (co, &b) in bias.data().iter().enumerate() {
            let base = (ni * co_n + co) * oh * ow;
            for v in &mut out[base..base + oh * ow] {
                *v = b;
            }
        }
    }
    scatter_adjoint(input, weight, stride, padding, oh, ow, &mut out);
    Tensor::new(vec![n, co_n, oh, ow], out)
}

/// Gradients of `conv2d` with respect to input, weight and bias.
pub fn conv2d_backward<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    grad_out: &Tensor<E>,
    stride: usize,
    padding: usize,
) -> Result<LayerGrads<E>, NnError> {
    let (n, ci, h, w) = input.dims4("conv2d_backward input")?;
    let (co_n, _, kh, kw) = dims2(weight);
    let (gn, gco, goh, gow) = grad_out.dims4("conv2d_backward grad")?;
    if gn != n || gco != co_n {
        return Err(shape_err(
            "conv2d_backward",
            format!("grad [{n}, {co_n}, _, _]"),
            format!("{:?}", grad_out.shape()),
        ));
    }

    // d/d input: adjoint scatter of the upstream gradient.
    let mut gx = vec![E::ZERO; n * ci * h * w];
    scatter_adjoint(grad_out, weight, stride, padding, h, w, &mut gx);

    // d/d weight and d/d bias.
    let x = input.data();
    let gy = grad_out.data();
    let mut gw = vec![E::ZERO; weight.len()];
    let mut gb = vec![E::ZERO; co_n];
    for ni in 0..n {
        for (co, gbv) in gb.iter_mut().enumerate() {
            let gy_base = (ni * co_n + co) * goh * gow;
            let mut bsum = E::ZERO;
            for &g in &gy[gy_base..gy_base + goh * gow] {
                bsum = bsum + g;
            }
            *gbv = *gbv + bsum;
            for c in 0..ci {
                let in_base = (ni * ci + c) * h * w;
                for ky in 0..kh {
                    let (oh_lo, oh_hi) = out_range(ky, stride, padding, h, goh);
                    for kx in 0..kw {
                        let (ow_lo, ow_hi) = out_range(kx, stride, padding, w, gow);
                        let mut acc = E::ZERO;
                        for oy in oh_lo..oh_hi {
                            let iy = oy * stride + ky - padding;
                            let in_row = in_base + iy * w;
                            let gy_row = gy_base + oy * gow;
                            for ox in ow_lo..ow_hi {
                                let ix = ox * stride + kx - padding;
                                acc = acc + gy[gy_row + ox] * x[in_row + ix];
                            }
                        }
                        let widx = ((co * ci + c) * kh + ky) * kw + kx;
                        gw[widx] = gw[widx] + acc;
                    }
                }
            }
        }
    }

    Ok((
        Tensor::new(vec![n, ci, h, w], gx)?,
        Tensor::new(weight.shape().to_vec(), gw)?,
        Tensor::new(vec![co_n], gb)?,
    ))
}

/// Gradients of `conv_transpose2d` with respect to input, weight and bias.
pub fn conv_transpose2d_backward<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    grad_out: &Tensor<E>,
    stride: usize,
    padding: usize,
) -> Result<LayerGrads<E>, NnError> {
    let (n, ci, h, w) = input.dims4("conv_transpose2d_backward input")?;
    let (_, co_n, kh, kw) = dims2(weight);
    let (gn, gco, goh, gow) = grad_out.dims4("conv_transpose2d_backward grad")?;
    if gn != n || gco != co_n {
        return Err(shape_err(
            "conv_transpose2d_backward",
            format!("grad [{n}, {co_n}, _, _]"),
            format!("{:?}", grad_out.shape()),
        ));
    }

    let x = input.data();
    let gy = grad_out.data();
    let wd = weight.data();

    // The forward was a scatter through w; its adjoint is the gather
    // `gx[n,ci,iy,ix] = sum_{co,ky,kx} gy[n,co,iy*s+ky-p,ix*s+kx-p] * w[ci,co,ky,kx]`.
    let mut gx = vec![E::ZERO; n * ci * h * w];
    let mut gw = vec![E::ZERO; weight.len()];
    let mut gb = vec![E::ZERO; co_n];

    for ni in 0..n {
        for c in 0..ci {
            let in_base = (ni * ci + c) * h * w;
            for co in 0..co_n {
                let gy_base = (ni * co_n + co) * goh * gow;
                for ky in 0..kh {
                    let (h_lo, h_hi) = out_range(ky, stride, padding, goh, h);
                    for kx in 0..kw {
                        let (w_lo, w_hi) = out_range(kx, stride, padding, gow, w);
                        let wv = wd[((c * co_n + co) * kh + ky) * kw + kx];
                        let mut wacc = E::ZERO;
                        for sy in h_lo..h_hi {
                            let oy = sy * stride + ky - padding;
                            let in_row = in_base + sy * w;
                            let gy_row = gy_base + oy * gow;
                            for sx in w_lo..w_hi {
                                let ox = sx * stride + kx - padding;
                                let g = gy[gy_row + ox];
                                gx[in_row + sx] = gx[in_row + sx] + g * wv;
                                wacc = wacc + x[in_row + sx] * g;
                            }
                        }
                        let widx = ((c * co_n + co) * kh + ky) * kw + kx;
                        gw[widx] = gw[widx] + wacc;
                    }
                }
            }
        }
    }
    for ni in 0..n {
        for (co, gbv) in gb.iter_mut().enumerate() {
            let gy_base = (ni * co_n + co) * goh * gow;
            let mut acc = E::ZERO;
            for &g in &gy[gy_base..gy_base + goh * gow] {
                acc = acc + g;
            }
            *gbv = *gbv + acc;
        }
    }

    Ok((
        Tensor::new(vec![n, ci, h, w], gx)?,
        Tensor::new(weight.shape().to_vec(), gw)?,
        Tensor::new(vec![co_n], gb)?,
    ))
}

/// Rectified linear unit.
pub fn relu<E: Element>(input: &Tensor<E>) -> Tensor<E> {
    input.map(|v| if v > E::ZERO { v } else { E::ZERO })
}

/// Backward rule `grad * 1[x > 0]`, evaluated on the pre-activation `x`.
pub fn relu_backward<E: Element>(grad: &Tensor<E>, pre_activation: &Tensor<E>) -> Tensor<E> {
    debug_assert_eq!(grad.shape(), pre_activation.shape());
    let mut out = grad.clone();
    for (g, &x) in out.data_mut().iter_mut().zip(pre_activation.data()) {
        if x <= E::ZERO {
            *g = E::ZERO;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn randomized<E: Element>(shape: Vec<usize>, seed: u64) -> Tensor<E> {
        let mut rng = SplitMix64::new(seed);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| E::from_f64(rng.next_symmetric(1.0))).collect();
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn ones_kernel_sums_window() {
        // 3x3 input of ones, 3x3 kernel of ones, no padding: single 9.0.
        let x = Tensor::<f64>::filled(vec![1, 1, 3, 3], 1.0);
        let w = Tensor::<f64>::filled(vec![1, 1, 3, 3], 1.0);
        let b = Tensor::<f64>::zeros(vec![1]);
        let y = conv2d(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(y.shape(), [1, 1, 1, 1]);
        assert_eq!(y.data()[0], 9.0);
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let x = randomized::<f64>(vec![2, 1, 4, 5], 11);
        let w = Tensor::<f64>::filled(vec![1, 1, 1, 1], 1.0);
        let b = Tensor::<f64>::zeros(vec![1]);
        let y = conv2d(&x, &w, &b, 1, 0).unwrap();
        assert!(y.bit_eq(&x));
    }

    #[test]
    fn zero_weight_gives_constant_bias_output() {
        let x = randomized::<f32>(vec![1, 3, 4, 4], 5);
        let w = Tensor::<f32>::zeros(vec![2, 3, 3, 3]);
        let b = Tensor::new(vec![2], vec![2.5f32, -1.0]).unwrap();
        let y = conv2d(&x, &w, &b, 1, 1).unwrap();
        let (_, _, oh, ow) = y.dims4("t").unwrap();
        for co in 0..2 {
            for i in 0..oh * ow {
                assert_eq!(y.data()[co * oh * ow + i], b.data()[co]);
            }
        }
    }

    #[test]
    fn center_tap_with_padding_reproduces_input() {
        let x = Tensor::new(vec![1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let mut wdata = vec![0.0; 9];
        wdata[4] = 1.0; // center tap only
        let w = Tensor::new(vec![1, 1, 3, 3], wdata).unwrap();
        let b = Tensor::new(vec![1], vec![0.5]).unwrap();
        let y = conv2d(&x, &w, &b, 1, 1).unwrap();
        // center tap + padding 1 reproduces the input plus bias
        let expect: Vec<f64> = (1..=9).map(|v| v as f64 + 0.5).collect();
        assert_eq!(y.data(), expect.as_slice());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let x = Tensor::<f32>::zeros(vec![1, 2, 4, 4]);
        let w = Tensor::<f32>::zeros(vec![1, 3, 3, 3]); // wrong in-channels
        let b = Tensor::<f32>::zeros(vec![1]);
        assert!(conv2d(&x, &w, &b, 1, 0).is_err());
        // kernel larger than padded input
        let w = Tensor::<f32>::zeros(vec![1, 2, 7, 7]);
        assert!(conv2d(&x, &w, &b, 1, 0).is_err());
    }

    #[test]
    fn transpose_identity_kernel() {
        let x = randomized::<f64>(vec![1, 1, 4, 4], 3);
        let w = Tensor::<f64>::filled(vec![1, 1, 1, 1], 1.0);
        let b = Tensor::<f64>::zeros(vec![1]);
        let y = conv_transpose2d(&x, &w, &b, 1, 0, 0).unwrap();
        assert!(y.bit_eq(&x));
    }

    #[test]
    fn transpose_zero_input_gives_bias_planes() {
        let x = Tensor::<f32>::zeros(vec![1, 2, 3, 3]);
        let w = randomized::<f32>(vec![2, 3, 3, 3], 17);
        let b = Tensor::new(vec![3], vec![1.0f32, 2.0, 3.0]).unwrap();
        let y = conv_transpose2d(&x, &w, &b, 2, 1, 1).unwrap();
        let (_, co, oh, ow) = y.dims4("t").unwrap();
        assert_eq!((co, oh, ow), (3, 6, 6));
        for c in 0..co {
            for i in 0..oh * ow {
                assert_eq!(y.data()[c * oh * ow + i], b.data()[c]);
            }
        }
    }

    fn adjoint_gap<E: Element>(seed: u64, stride: usize, padding: usize) -> f64 {
        let x = randomized::<E>(vec![1, 2, 4, 4], seed);
        let w = randomized::<E>(vec![3, 2, 3, 3], seed + 1);
        let zb_out = Tensor::<E>::zeros(vec![3]);
        let zb_in = Tensor::<E>::zeros(vec![2]);
        let cx = conv2d(&x, &w, &zb_out, stride, padding).unwrap();
        let y = randomized::<E>(cx.shape().to_vec(), seed + 2);
        // output_padding chosen so the transpose lands back on x's size
        let (_, _, h, _) = x.dims4("t").unwrap();
        let (_, _, ch, _) = cx.dims4("t").unwrap();
        let op = h - (stride * (ch - 1) + 3 - 2 * padding);
        let ty = conv_transpose2d(&y, &w, &zb_in, stride, padding, op).unwrap();
        let lhs = cx.dot(&y).unwrap().to_f64();
        let rhs = x.dot(&ty).unwrap().to_f64();
        (lhs - rhs).abs() / lhs.abs().max(1.0)
    }

    #[test]
    fn adjoint_identity_f32_and_f64() {
        for seed in 0..20 {
            assert!(adjoint_gap::<f32>(seed * 3 + 1, 1, 0) < 1e-5);
            assert!(adjoint_gap::<f64>(seed * 3 + 1, 1, 0) < 1e-10);
            assert!(adjoint_gap::<f32>(seed * 3 + 2, 2, 1) < 1e-5);
            assert!(adjoint_gap::<f64>(seed * 3 + 2, 2, 1) < 1e-10);
        }
    }

    #[test]
    fn stride2_round_trip_shapes() {
        // 8x8 -> conv s2 p1 k3 -> 4x4 -> transpose s2 p1 k3 op1 -> 8x8
        let x = randomized::<f32>(vec![1, 1, 8, 8], 9);
        let w = randomized::<f32>(vec![4, 1, 3, 3], 10);
        let b4 = Tensor::<f32>::zeros(vec![4]);
        let b1 = Tensor::<f32>::zeros(vec![1]);
        let down = conv2d(&x, &w, &b4, 2, 1).unwrap();
        assert_eq!(down.shape(), [1, 4, 4, 4]);
        let wt = randomized::<f32>(vec![4, 1, 3, 3], 11);
        let up = conv_transpose2d(&down, &wt, &b1, 2, 1, 1).unwrap();
        assert_eq!(up.shape(), [1, 1, 8, 8]);
    }

    #[test]
    fn relu_rules() {
        let x = Tensor::new(vec![4], vec![-2.0f64, 0.0, 0.5, 3.0]).unwrap();
        let y = relu(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 0.5, 3.0]);
        let g = Tensor::filled(vec![4], 1.0f64);
        let gx = relu_backward(&g, &x);
        assert_eq!(gx.data(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn output_padding_must_be_less_than_stride() {
        let x = Tensor::<f32>::zeros(vec![1, 1, 4, 4]);
        let w = Tensor::<f32>::zeros(vec![1, 1, 3, 3]);
        let b = Tensor::<f32>::zeros(vec![1]);
        assert!(conv_transpose2d(&x, &w, &b, 2, 1, 2).is_err());
    }
}
