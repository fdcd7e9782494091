//! EfficientNet-B0/B2 feature extractor with torchvision parameter names.

use candle_core::{Module, Tensor};

use super::layers::{sigmoid, BatchNorm2d, Conv2d};
use super::params::{Init, ParamStore};
use super::{Backbone, Stats};
use crate::error::Result;

const BN_EPS: f64 = 1e-5;

/// (expand ratio, kernel, stride, in channels, out channels, layers) at
/// width and depth multiplier 1.
const STAGES: [(usize, usize, usize, usize, usize, usize); 7] = [
    (1, 3, 1, 32, 16, 1),
    (6, 3, 2, 16, 24, 2),
    (6, 5, 2, 24, 40, 2),
    (6, 3, 2, 40, 80, 3),
    (6, 5, 1, 80, 112, 3),
    (6, 5, 2, 112, 192, 4),
    (6, 3, 1, 192, 320, 1),
];

fn make_divisible(v: f64, divisor: usize) -> usize {
    let d = divisor as f64;
    let mut out = ((v + d / 2.0) / d).floor() as usize * divisor;
    out = out.max(divisor);
    if (out as f64) < 0.9 * v {
        out += divisor;
    }
    out
}

struct ConvBnAct {
    conv: Conv2d,
    bn: BatchNorm2d,
    act: bool,
}

impl ConvBnAct {
    #[allow(clippy::too_many_arguments)]
    fn load(p: &mut ParamStore, prefix: &str, cin: usize, cout: usize, k: usize, stride: usize, groups: usize, act: bool) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::load(p, &format!("{prefix}.0"), cin, cout, k, stride, groups, false, Init::KaimingFanIn)?,
            bn: BatchNorm2d::load(p, &format!("{prefix}.1"), cout, BN_EPS)?,
            act,
        })
    }
}

impl ConvBnAct {
    fn activate(&self, y: Tensor) -> candle_core::Result<Tensor> {
        if self.act {
            y.silu()
        } else {
            Ok(y)
        }
    }

    fn calibrate(&mut self, x: &Tensor, stats: &mut Stats) -> candle_core::Result<Tensor> {
        let y = self.bn.calibrate(&self.conv.forward(x)?, stats)?;
        self.activate(y)
    }
}

impl Module for ConvBnAct {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        self.activate(self.bn.forward(&self.conv.forward(x)?)?)
    }
}

struct SqueezeExcitation {
    fc1: Conv2d,
    fc2: Conv2d,
}

impl Module for SqueezeExcitation {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let s = x.mean_keepdim(3)?.mean_keepdim(2)?;
        let s = sigmoid(&self.fc2.forward(&self.fc1.forward(&s)?.silu()?)?)?;
        x.broadcast_mul(&s)
    }
}

struct MbConv {
    expand: Option<ConvBnAct>,
    depthwise: ConvBnAct,
    se: SqueezeExcitation,
    project: ConvBnAct,
    residual: bool,
}

impl MbConv {
    fn load(p: &mut ParamStore, prefix: &str, expand_ratio: usize, k: usize, stride: usize, cin: usize, cout: usize) -> Result<Self> {
        let hidden = make_divisible((cin * expand_ratio) as f64, 8);
        let mut idx = 0;
        let mut next = || {
            let s = format!("{prefix}.block.{idx}");
            idx += 1;
            s
        };
        let expand = if hidden != cin {
            Some(ConvBnAct::load(p, &next(), cin, hidden, 1, 1, 1, true)?)
        } else {
            None
        };
        let depthwise = ConvBnAct::load(p, &next(), hidden, hidden, k, stride, hidden, true)?;
        let squeeze = (cin / 4).max(1);
        let se_prefix = next();
        let se = SqueezeExcitation {
            fc1: Conv2d::load(p, &format!("{se_prefix}.fc1"), hidden, squeeze, 1, 1, 1, true, Init::KaimingFanIn)?,
            fc2: Conv2d::load(p, &format!("{se_prefix}.fc2"), squeeze, hidden, 1, 1, 1, true, Init::KaimingFanIn)?,
        };
        let project = ConvBnAct::load(p, &next(), hidden, cout, 1, 1, 1, false)?;
        Ok(Self {
            expand,
            depthwise,
            se,
            project,
            residual: stride == 1 && cin == cout,
        })
    }
}

impl MbConv {
    fn calibrate(&mut self, x: &Tensor, stats: &mut Stats) -> candle_core::Result<Tensor> {
        let mut y = match &mut self.expand {
            Some(e) => e.calibrate(x, stats)?,
            None => x.clone(),
        };
        y = self.depthwise.calibrate(&y, stats)?;
        y = self.se.forward(&y)?;
        y = self.project.calibrate(&y, stats)?;
        if self.residual {
            y + x
        } else {
            Ok(y)
        }
    }
}

impl Module for MbConv {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let mut y = match &self.expand {
            Some(e) => e.forward(x)?,
            None => x.clone(),
        };
        y = self.depthwise.forward(&y)?;
        y = self.se.forward(&y)?;
        y = self.project.forward(&y)?;
        if self.residual {
            y + x
        } else {
            Ok(y)
        }
    }
}

pub(crate) struct EfficientNet {
    stem: ConvBnAct,
    blocks: Vec<MbConv>,
    head_conv: ConvBnAct,
    feature_dim: usize,
}

impl EfficientNet {
    pub fn load(p: &mut ParamStore, width_mult: f64, depth_mult: f64) -> Result<Self> {
        let ch = |c: usize| make_divisible(c as f64 * width_mult, 8);
        let stem_out = ch(STAGES[0].3);
        let stem = ConvBnAct::load(p, "features.0", 3, stem_out, 3, 2, 1, true)?;
        let mut blocks = Vec::new();
        for (stage, &(expand, k, stride, cin, cout, layers)) in STAGES.iter().enumerate() {
            let repeats = (layers as f64 * depth_mult).ceil() as usize;
            for i in 0..repeats {
                let (block_in, block_stride) = if i == 0 { (ch(cin), stride) } else { (ch(cout), 1) };
                let prefix = format!("features.{}.{i}", stage + 1);
                blocks.push(MbConv::load(p, &prefix, expand, k, block_stride, block_in, ch(cout))?);
            }
        }
        let last_in = ch(STAGES[6].4);
        let feature_dim = 4 * last_in;
        let head_conv = ConvBnAct::load(p, "features.8", last_in, feature_dim, 1, 1, 1, true)?;
        Ok(Self {
            stem,
            blocks,
            head_conv,
            feature_dim,
        })
    }
}

impl Backbone for EfficientNet {
    fn cam_layer(&self) -> &'static str {
        "features.8"
    }

    fn to_cam_layer(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let mut y = self.stem.forward(x)?;
        for b in &self.blocks {
            y = b.forward(&y)?;
        }
        self.head_conv.forward(&y)
    }

    fn pool_cam_layer(&self, a: &Tensor) -> candle_core::Result<Tensor> {
        a.mean(3)?.mean(2)
    }

    fn calibrate(&mut self, x: &Tensor, stats: &mut Stats) -> candle_core::Result<()> {
        let mut y = self.stem.calibrate(x, stats)?;
        for b in &mut self.blocks {
            y = b.calibrate(&y, stats)?;
        }
        self.head_conv.calibrate(&y, stats)?;
        Ok(())
    }

    fn feature_dim(&self) -> usize {
        self.feature_dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_rounding_matches_reference_widths() {
        assert_eq!(make_divisible(32.0 * 1.1, 8), 32);
        assert_eq!(make_divisible(320.0 * 1.1, 8), 352);
        assert_eq!(make_divisible(16.0 * 1.1, 8), 16);
        assert_eq!(make_divisible(24.0 * 1.1, 8), 24);
        assert_eq!(make_divisible(40.0 * 1.1, 8), 48);
        assert_eq!(make_divisible(112.0 * 1.1, 8), 120);
    }
}
