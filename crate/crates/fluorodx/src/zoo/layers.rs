use candle_core::{Module, Tensor, D};

use super::depthwise::depthwise_conv2d;
use super::params::{Init, Kind, ParamStore};
use crate::error::Result;

#[derive(Debug, Clone)]
pub(crate) struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: usize,
    depthwise: bool,
}

impl Conv2d {
    /// `groups` must be 1 or equal to both channel counts.
    #[allow(clippy::too_many_arguments)]
    pub fn load(
        p: &mut ParamStore,
        prefix: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        bias: bool,
        init: Init,
    ) -> Result<Self> {
        let depthwise = groups > 1;
        let in_per_group = if depthwise { 1 } else { cin };
        let weight = p.get(&format!("{prefix}.weight"), &[cout, in_per_group, kernel, kernel], init, Kind::Weight)?;
        let bias = if bias {
            Some(p.get(&format!("{prefix}.bias"), &[cout], Init::Const(0.0), Kind::Weight)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding: (kernel - 1) / 2,
            depthwise,
        })
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }
}

impl Module for Conv2d {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let (cout, _, kh, _) = self.weight.dims4()?;
        let y = if self.depthwise {
            depthwise_conv2d(x, &self.weight, self.stride, self.padding)?
        } else if kh == 1 && self.stride == 1 && self.padding == 0 {
            let (b, cin, h, w) = x.dims4()?;
            let flat = x.reshape((b, cin, h * w))?;
            self.weight.reshape((cout, cin))?.broadcast_matmul(&flat)?.reshape((b, cout, h, w))?
        } else {
            x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?
        };
        match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((1, cout, 1, 1))?),
            None => Ok(y),
        }
    }
}

/// Batch normalization with running statistics (evaluation mode).
#[derive(Debug, Clone)]
pub(crate) struct BatchNorm2d {
    prefix: String,
    weight: Tensor,
    bias: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    eps: f64,
}

impl BatchNorm2d {
    pub fn load(p: &mut ParamStore, prefix: &str, channels: usize, eps: f64) -> Result<Self> {
        let shape = [channels];
        Ok(Self {
            prefix: prefix.to_string(),
            weight: p.get(&format!("{prefix}.weight"), &shape, Init::Const(1.0), Kind::Weight)?,
            bias: p.get(&format!("{prefix}.bias"), &shape, Init::Const(0.0), Kind::Weight)?,
            running_mean: p.get(&format!("{prefix}.running_mean"), &shape, Init::Const(0.0), Kind::Buffer)?,
            running_var: p.get(&format!("{prefix}.running_var"), &shape, Init::Const(1.0), Kind::Buffer)?,
            eps,
        })
    }
}

impl BatchNorm2d {
    /// Replaces the running statistics with the per-channel mean and biased
    /// variance of `x`, records them in `stats` by parameter name, then
    /// normalizes `x` with them.
    pub fn calibrate(&mut self, x: &Tensor, stats: &mut Vec<(String, Tensor)>) -> candle_core::Result<Tensor> {
        let c = x.dim(1)?;
        let flat = x.transpose(0, 1)?.contiguous()?.reshape((c, ()))?;
        let mean = flat.mean(1)?;
        let var = flat.broadcast_sub(&mean.unsqueeze(1)?)?.sqr()?.mean(1)?;
        stats.push((format!("{}.running_mean", self.prefix), mean.clone()));
        stats.push((format!("{}.running_var", self.prefix), var.clone()));
        self.running_mean = mean;
        self.running_var = var;
        self.forward(x)
    }
}

impl Module for BatchNorm2d {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let c = self.weight.dim(0)?;
        let scale = (&self.weight / (&self.running_var + self.eps)?.sqrt()?)?;
        let shift = (&self.bias - (&self.running_mean * &scale)?)?;
        x.broadcast_mul(&scale.reshape((1, c, 1, 1))?)?
            .broadcast_add(&shift.reshape((1, c, 1, 1))?)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn load(p: &mut ParamStore, prefix: &str, fan_in: usize, fan_out: usize, init: Init, bias_init: Init) -> Result<Self> {
        Ok(Self {
            weight: p.get(&format!("{prefix}.weight"), &[fan_out, fan_in], init, Kind::Weight)?,
            bias: p.get(&format!("{prefix}.bias"), &[fan_out], bias_init, Kind::Weight)?,
        })
    }

    pub fn new(weight: Tensor, bias: Tensor) -> Self {
        Self { weight, bias }
    }
}

impl Module for Linear {
    /// Works on `[B, in]` and `[B, T, in]` inputs.
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        x.broadcast_matmul(&self.weight.t()?)?.broadcast_add(&self.bias)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn load(p: &mut ParamStore, prefix: &str, dim: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            weight: p.get(&format!("{prefix}.weight"), &[dim], Init::Const(1.0), Kind::Weight)?,
            bias: p.get(&format!("{prefix}.bias"), &[dim], Init::Const(0.0), Kind::Weight)?,
            eps,
        })
    }
}

impl Module for LayerNorm {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        centered
            .broadcast_div(&(var + self.eps)?.sqrt()?)?
            .broadcast_mul(&self.weight)?
            .broadcast_add(&self.bias)
    }
}

pub(crate) fn sigmoid(x: &Tensor) -> candle_core::Result<Tensor> {
    (x.neg()?.exp()? + 1.0)?.recip()
}

pub(crate) fn max_pool2(x: &Tensor) -> candle_core::Result<Tensor> {
    x.max_pool2d(2)
}
