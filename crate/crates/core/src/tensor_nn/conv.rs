use rand::Rng;

use super::{Cache, FeatureMap, GradMode, ParamTensor, Shape};
use crate::{Error, Result, Scalar};

/// Output indices `o` in `[lo, hi)` whose tap `o * stride + offset - padding`
/// lands inside `[0, in_len)`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, offset: usize, stride: usize, padding: usize) -> (usize, usize) {
    let lo = if padding > offset {
        (padding - offset).div_ceil(stride)
    } else {
        0
    };
    let hi = if in_len + padding > offset {
        ((in_len + padding - offset - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::invalid("conv stride must be >= 1"));
    }
    if input + 2 * padding < kernel {
        return Err(Error::shape(
            "conv2d spatial size",
            format!("at least {kernel} after padding"),
            input + 2 * padding,
        ));
    }
    Ok((input + 2 * padding - kernel) / stride + 1)
}

fn check_weight<T: Scalar>(input: Shape, weight: &ParamTensor<T>) -> Result<(usize, usize)> {
    let [out_ch, in_ch, kh, kw] = weight.shape[..] else {
        return Err(Error::shape("conv2d weight rank", "(out, in, k, k)", format!("{:?}", weight.shape)));
    };
    if kh != kw {
        return Err(Error::shape("conv2d kernel", "square kernel", format!("{kh}x{kw}")));
    }
    if in_ch != input.channels {
        return Err(Error::shape("conv2d input channels", in_ch, input.channels));
    }
    Ok((out_ch, kh))
}

/// Unfolds `input` into a `(C k k) x (oh ow)` row-major patch matrix; taps in
/// the padding are zero.
fn im2col<T: Scalar>(input: &FeatureMap<T>, k: usize, stride: usize, padding: usize, oh: usize, ow: usize) -> Vec<T> {
    let s = input.shape();
    let n = oh * ow;
    let mut col = vec![T::zero(); s.channels * k * k * n];
    let data = input.data();
    for ic in 0..s.channels {
        let plane = &data[ic * s.plane()..(ic + 1) * s.plane()];
        for ky in 0..k {
            let (ylo, yhi) = valid_range(oh, s.height, ky, stride, padding);
            for kx in 0..k {
                let (xlo, xhi) = valid_range(ow, s.width, kx, stride, padding);
                let row = &mut col[((ic * k + ky) * k + kx) * n..][..n];
                for oy in ylo..yhi {
                    let iy = oy * stride + ky - padding;
                    let in_row = &plane[iy * s.width..(iy + 1) * s.width];
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if stride == 1 {
                        dst[xlo..xhi].copy_from_slice(&in_row[xlo + kx - padding..xhi + kx - padding]);
                    } else {
                        for ox in xlo..xhi {
                            dst[ox] = in_row[ox * stride + kx - padding];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters a patch matrix back onto a map of shape `s`.
fn col2im<T: Scalar>(col: &[T], s: Shape, k: usize, stride: usize, padding: usize, oh: usize, ow: usize) -> FeatureMap<T> {
    let n = oh * ow;
    let mut out = FeatureMap::zeros(s);
    let plane_len = s.plane();
    for (ic, plane) in out.data_mut().chunks_mut(plane_len).enumerate() {
        for ky in 0..k {
            let (ylo, yhi) = valid_range(oh, s.height, ky, stride, padding);
            for kx in 0..k {
                let (xlo, xhi) = valid_range(ow, s.width, kx, stride, padding);
                let row = &col[((ic * k + ky) * k + kx) * n..][..n];
                for oy in ylo..yhi {
                    let iy = oy * stride + ky - padding;
                    let g_row = &mut plane[iy * s.width..(iy + 1) * s.width];
                    let src = &row[oy * ow..(oy + 1) * ow];
                    if stride == 1 {
                        for (g, &v) in g_row[xlo + kx - padding..xhi + kx - padding].iter_mut().zip(&src[xlo..xhi]) {
                            *g += v;
                        }
                    } else {
                        for ox in xlo..xhi {
                            g_row[ox * stride + kx - padding] += src[ox];
                        }
                    }
                }
            }
        }
    }
    out
}

/// 2-D cross-correlation with zero padding.
pub fn conv2d<T: Scalar>(
    input: &FeatureMap<T>,
    weight: &ParamTensor<T>,
    bias: Option<&ParamTensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<FeatureMap<T>> {
    let s = input.shape();
    let (out_ch, k) = check_weight(s, weight)?;
    if let Some(b) = bias {
        if b.len() != out_ch {
            return Err(Error::shape("conv2d bias", out_ch, b.len()));
        }
    }
    let oh = conv_output_size(s.height, k, stride, padding)?;
    let ow = conv_output_size(s.width, k, stride, padding)?;
    let n = oh * ow;
    let kk = s.channels * k * k;
    let mut out = FeatureMap::zeros(Shape::new(out_ch, oh, ow));
    if let Some(b) = bias {
        for (plane, &bv) in out.data_mut().chunks_mut(n).zip(&b.values) {
            plane.fill(bv);
        }
    }
    let col = im2col(input, k, stride, padding, oh, ow);
    T::gemm(out_ch, kk, n, &weight.values, (kk, 1), &col, (n, 1), T::one(), out.data_mut());
    Ok(out)
}

/// Adjoint of [`conv2d`].
///
/// Returns the input gradient (when `need_input` is set) and accumulates into
/// `weight_grad` / `bias_grad` when they are given.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    input: &FeatureMap<T>,
    weight: &ParamTensor<T>,
    stride: usize,
    padding: usize,
    upstream: &FeatureMap<T>,
    weight_grad: Option<&mut [T]>,
    bias_grad: Option<&mut [T]>,
    need_input: bool,
) -> Result<Option<FeatureMap<T>>> {
    let s = input.shape();
    let (out_ch, k) = check_weight(s, weight)?;
    let oh = conv_output_size(s.height, k, stride, padding)?;
    let ow = conv_output_size(s.width, k, stride, padding)?;
    upstream.expect_shape(Shape::new(out_ch, oh, ow), "conv2d_backward upstream")?;
    let n = oh * ow;
    let kk = s.channels * k * k;
    let up = upstream.data();

    if let Some(bg) = bias_grad {
        for (g, plane) in bg.iter_mut().zip(up.chunks(n)) {
            *g += plane.iter().copied().sum::<T>();
        }
    }
    if let Some(wg) = weight_grad {
        if wg.len() != out_ch * kk {
            return Err(Error::shape("conv2d weight grad", out_ch * kk, wg.len()));
        }
        let col = im2col(input, k, stride, padding, oh, ow);
        // dW += up . col^T
        T::gemm(out_ch, n, kk, up, (n, 1), &col, (1, n), T::one(), wg);
    }
    if !need_input {
        return Ok(None);
    }
    // dcol = W^T . up
    let mut dcol = vec![T::zero(); kk * n];
    T::gemm(kk, out_ch, n, &weight.values, (1, kk), up, (n, 1), T::zero(), &mut dcol);
    Ok(Some(col2im(&dcol, s, k, stride, padding, oh, ow)))
}

/// Convolution layer with bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub weight: ParamTensor<T>,
    pub bias: ParamTensor<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        Conv2d {
            weight: ParamTensor::he_normal(
                format!("{name}.weight"),
                &[out_channels, in_channels, kernel, kernel],
                in_channels * kernel * kernel,
                rng,
            ),
            bias: ParamTensor::zeros(format!("{name}.bias"), &[out_channels]),
            stride,
            padding,
        }
    }

    /// A layer whose weights and bias start at exactly zero.
    pub fn zeroed(name: &str, in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Conv2d {
            weight: ParamTensor::zeros(format!("{name}.weight"), &[out_channels, in_channels, kernel, kernel]),
            bias: ParamTensor::zeros(format!("{name}.bias"), &[out_channels]),
            stride,
            padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape[2]
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let k = self.kernel();
        Ok(Shape::new(
            self.out_channels(),
            conv_output_size(input.height, k, self.stride, self.padding)?,
            conv_output_size(input.width, k, self.stride, self.padding)?,
        ))
    }

    pub fn forward(&self, input: &FeatureMap<T>) -> Result<(FeatureMap<T>, Cache<T>)> {
        let out = conv2d(input, &self.weight, Some(&self.bias), self.stride, self.padding)?;
        let cache = Cache::new(input.shape(), out.shape()).save(input.clone());
        Ok((out, cache))
    }

    pub fn backward(&mut self, cache: &Cache<T>, upstream: &FeatureMap<T>, mode: GradMode) -> Result<FeatureMap<T>> {
        cache.check_upstream(upstream)?;
        let input = cache.saved(0)?;
        let accumulate = mode == GradMode::Accumulate;
        // The weight gradient is moved out so the weights can be read alongside.
        let mut wgrad = std::mem::take(&mut self.weight.grad);
        let result = conv2d_backward(
            input,
            &self.weight,
            self.stride,
            self.padding,
            upstream,
            accumulate.then_some(&mut wgrad[..]),
            accumulate.then_some(&mut self.bias.grad[..]),
            true,
        );
        self.weight.grad = wgrad;
        result?.ok_or(Error::MissingCache)
    }
}
