//! Depthwise 2-D convolution as a candle custom op.
//!
//! candle lowers grouped convolutions to one convolution per group, which is
//! unusable at the channel counts of inverted residual blocks. These kernels
//! loop directly over `[B, C, H, W]` buffers.

use candle_core::{CpuStorage, CustomOp2, Layout, Result, Shape, Tensor};

#[derive(Debug, Clone, Copy)]
struct Geometry {
    batch: usize,
    channels: usize,
    in_h: usize,
    in_w: usize,
    k: usize,
    out_h: usize,
    out_w: usize,
    stride: usize,
    padding: usize,
}

impl Geometry {
    fn new(input: &[usize], kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        let [batch, channels, in_h, in_w] = input else {
            candle_core::bail!("depthwise conv expects a rank-4 input, got {input:?}")
        };
        if in_h + 2 * padding < kernel || in_w + 2 * padding < kernel {
            candle_core::bail!("depthwise conv kernel {kernel} larger than padded input {input:?}")
        }
        Ok(Self {
            batch: *batch,
            channels: *channels,
            in_h: *in_h,
            in_w: *in_w,
            k: kernel,
            out_h: (in_h + 2 * padding - kernel) / stride + 1,
            out_w: (in_w + 2 * padding - kernel) / stride + 1,
            stride,
            padding,
        })
    }

    /// Calls `f(input_index, output_index, weight_index)` for every tap that
    /// lands inside the input.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (ih, iw, oh, ow, k) = (self.in_h, self.in_w, self.out_h, self.out_w, self.k);
        for b in 0..self.batch {
            for c in 0..self.channels {
                let in_base = (b * self.channels + c) * ih * iw;
                let out_base = (b * self.channels + c) * oh * ow;
                let w_base = c * k * k;
                for oy in 0..oh {
                    for ky in 0..k {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= ih as isize {
                            continue;
                        }
                        let in_row = in_base + iy as usize * iw;
                        for ox in 0..ow {
                            for kx in 0..k {
                                let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                                if ix < 0 || ix >= iw as isize {
                                    continue;
                                }
                                f(in_row + ix as usize, out_base + oy * ow + ox, w_base + ky * k + kx);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn f32_slice<'a>(s: &'a CpuStorage, l: &Layout) -> Result<&'a [f32]> {
    let data = s.as_slice::<f32>()?;
    match l.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => candle_core::bail!("depthwise conv requires contiguous tensors"),
    }
}

struct Forward {
    stride: usize,
    padding: usize,
}

impl CustomOp2 for Forward {
    fn name(&self) -> &'static str {
        "depthwise-conv2d"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let (input, weight) = (f32_slice(s1, l1)?, f32_slice(s2, l2)?);
        let k = l2.dims()[2];
        let g = Geometry::new(l1.dims(), k, self.stride, self.padding)?;
        let mut out = vec![0f32; g.batch * g.channels * g.out_h * g.out_w];
        g.for_each_tap(|i, o, w| out[o] += input[i] * weight[w]);
        Ok((CpuStorage::F32(out), Shape::from((g.batch, g.channels, g.out_h, g.out_w))))
    }

    fn bwd(&self, input: &Tensor, weight: &Tensor, _res: &Tensor, grad: &Tensor) -> Result<(Option<Tensor>, Option<Tensor>)> {
        let grad = grad.contiguous()?;
        let geometry = Geometry::new(input.dims(), weight.dim(2)?, self.stride, self.padding)?;
        let grad_input = grad.apply_op2_no_bwd(weight, &InputGrad { geometry })?;
        let grad_weight = input.apply_op2_no_bwd(&grad, &WeightGrad { geometry })?;
        Ok((Some(grad_input), Some(grad_weight)))
    }
}

struct InputGrad {
    geometry: Geometry,
}

impl CustomOp2 for InputGrad {
    fn name(&self) -> &'static str {
        "depthwise-conv2d-input-grad"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let (grad, weight) = (f32_slice(s1, l1)?, f32_slice(s2, l2)?);
        let g = self.geometry;
        let mut out = vec![0f32; g.batch * g.channels * g.in_h * g.in_w];
        g.for_each_tap(|i, o, w| out[i] += grad[o] * weight[w]);
        Ok((CpuStorage::F32(out), Shape::from((g.batch, g.channels, g.in_h, g.in_w))))
    }
}

struct WeightGrad {
    geometry: Geometry,
}

impl CustomOp2 for WeightGrad {
    fn name(&self) -> &'static str {
        "depthwise-conv2d-weight-grad"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let (input, grad) = (f32_slice(s1, l1)?, f32_slice(s2, l2)?);
        let g = self.geometry;
        let mut out = vec![0f32; g.channels * g.k * g.k];
        g.for_each_tap(|i, o, w| out[w] += input[i] * grad[o]);
        Ok((CpuStorage::F32(out), Shape::from((g.channels, 1, g.k, g.k))))
    }
}

/// `input` is `[B, C, H, W]`, `weight` is `[C, 1, K, K]`.
pub fn depthwise_conv2d(input: &Tensor, weight: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let input = input.contiguous()?;
    let weight = weight.contiguous()?;
    input.apply_op2(&weight, Forward { stride, padding })
}
