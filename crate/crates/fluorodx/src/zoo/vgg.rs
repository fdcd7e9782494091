//! VGG16 feature extractor with torchvision parameter names.

use candle_core::{Module, Tensor};

use super::layers::{max_pool2, Conv2d, Linear};
use super::params::{Init, ParamStore};
use super::Backbone;
use crate::error::Result;

/// Channel plan; 0 marks a 2×2 max pool.
const PLAN: [usize; 18] = [64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0];
const HIDDEN: usize = 4096;

enum Layer {
    Conv(Conv2d),
    Pool,
}

pub(crate) struct Vgg16 {
    features: Vec<Layer>,
    fc1: Linear,
    fc2: Linear,
}

impl Vgg16 {
    pub fn load(p: &mut ParamStore) -> Result<Self> {
        let mut features = Vec::new();
        let mut index = 0;
        let mut cin = 3;
        for &c in &PLAN {
            if c == 0 {
                features.push(Layer::Pool);
                index += 1;
            } else {
                let conv = Conv2d::load(p, &format!("features.{index}"), cin, c, 3, 1, 1, true, Init::KaimingFanIn)?;
                features.push(Layer::Conv(conv));
                cin = c;
                index += 2;
            }
        }
        let fc_init = Init::Normal(0.01);
        Ok(Self {
            features,
            fc1: Linear::load(p, "classifier.0", 512 * 7 * 7, HIDDEN, fc_init, Init::Const(0.0))?,
            fc2: Linear::load(p, "classifier.3", HIDDEN, HIDDEN, fc_init, Init::Const(0.0))?,
        })
    }
}

impl Backbone for Vgg16 {
    /// The ReLU after the last convolution, before the final pool.
    fn cam_layer(&self) -> &'static str {
        "features.29"
    }

    fn to_cam_layer(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let mut y = x.clone();
        let last = self.features.len() - 1;
        for layer in &self.features[..last] {
            y = match layer {
                Layer::Conv(c) => c.forward(&y)?.relu()?,
                Layer::Pool => max_pool2(&y)?,
            };
        }
        Ok(y)
    }

    /// Final pool, then the two hidden fully connected layers. At 224 input
    /// the adaptive 7×7 average pool is the identity.
    fn pool_cam_layer(&self, a: &Tensor) -> candle_core::Result<Tensor> {
        let y = max_pool2(a)?;
        let (b, _, h, w) = y.dims4()?;
        if (h, w) != (7, 7) {
            candle_core::bail!("VGG16 expects a 7×7 map before the classifier, got {h}×{w}");
        }
        let y = y.reshape((b, 512 * 7 * 7))?;
        self.fc2.forward(&self.fc1.forward(&y)?.relu()?)?.relu()
    }

    fn feature_dim(&self) -> usize {
        HIDDEN
    }
}
