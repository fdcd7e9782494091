//! ViT-B/16 encoder with torchvision parameter names.

use candle_core::{Module, Tensor, D};

use super::layers::{Conv2d, LayerNorm, Linear};
use super::params::{Init, Kind, ParamStore};
use super::Backbone;
use crate::error::Result;

const PATCH: usize = 16;
const GRID: usize = 14;
const DIM: usize = 768;
const HEADS: usize = 12;
const MLP: usize = 3072;
const LAYERS: usize = 12;
const LN_EPS: f64 = 1e-6;
/// Grad-CAM reads the tokens entering the last encoder block, the deepest
/// point where patch tokens still feed the class token.
const CAM_LAYER: usize = LAYERS - 2;

struct EncoderBlock {
    ln_1: LayerNorm,
    in_proj: Linear,
    out_proj: Linear,
    ln_2: LayerNorm,
    mlp_0: Linear,
    mlp_3: Linear,
}

impl EncoderBlock {
    fn load(p: &mut ParamStore, prefix: &str) -> Result<Self> {
        let attn = format!("{prefix}.self_attention");
        let in_proj = Linear::new(
            p.get(&format!("{attn}.in_proj_weight"), &[3 * DIM, DIM], Init::XavierUniform, Kind::Weight)?,
            p.get(&format!("{attn}.in_proj_bias"), &[3 * DIM], Init::Const(0.0), Kind::Weight)?,
        );
        Ok(Self {
            ln_1: LayerNorm::load(p, &format!("{prefix}.ln_1"), DIM, LN_EPS)?,
            in_proj,
            out_proj: Linear::load(p, &format!("{attn}.out_proj"), DIM, DIM, Init::XavierUniform, Init::Const(0.0))?,
            ln_2: LayerNorm::load(p, &format!("{prefix}.ln_2"), DIM, LN_EPS)?,
            mlp_0: Linear::load(p, &format!("{prefix}.mlp.0"), DIM, MLP, Init::XavierUniform, Init::Normal(1e-6))?,
            mlp_3: Linear::load(p, &format!("{prefix}.mlp.3"), MLP, DIM, Init::XavierUniform, Init::Normal(1e-6))?,
        })
    }

    fn attention(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let (b, t, _) = x.dims3()?;
        let head_dim = DIM / HEADS;
        let qkv = self.in_proj.forward(x)?;
        let split = |i: usize| -> candle_core::Result<Tensor> {
            qkv.narrow(D::Minus1, i * DIM, DIM)?
                .reshape((b, t, HEADS, head_dim))?
                .transpose(1, 2)?
                .contiguous()
        };
        let (q, k, v) = (split(0)?, split(1)?, split(2)?);
        let scores = (q.matmul(&k.t()?)? / (head_dim as f64).sqrt())?;
        let weights = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let out = weights.matmul(&v)?.transpose(1, 2)?.reshape((b, t, DIM))?;
        self.out_proj.forward(&out)
    }
}

impl Module for EncoderBlock {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let x = (x + self.attention(&self.ln_1.forward(x)?)?)?;
        let h = self.mlp_3.forward(&self.mlp_0.forward(&self.ln_2.forward(&x)?)?.gelu_erf()?)?;
        x + h
    }
}

pub(crate) struct VitB16 {
    conv_proj: Conv2d,
    class_token: Tensor,
    pos_embedding: Tensor,
    layers: Vec<EncoderBlock>,
    ln: LayerNorm,
}

impl VitB16 {
    pub fn load(p: &mut ParamStore) -> Result<Self> {
        let fan_in = 3 * PATCH * PATCH;
        let conv_proj = Conv2d::load(p, "conv_proj", 3, DIM, PATCH, PATCH, 1, true, Init::Normal((1.0 / fan_in as f64).sqrt()))?.with_padding(0);
        let class_token = p.get("class_token", &[1, 1, DIM], Init::Const(0.0), Kind::Weight)?;
        let pos_embedding = p.get("encoder.pos_embedding", &[1, GRID * GRID + 1, DIM], Init::Normal(0.02), Kind::Weight)?;
        let layers = (0..LAYERS)
            .map(|i| EncoderBlock::load(p, &format!("encoder.layers.encoder_layer_{i}")))
            .collect::<Result<_>>()?;
        let ln = LayerNorm::load(p, "encoder.ln", DIM, LN_EPS)?;
        Ok(Self {
            conv_proj,
            class_token,
            pos_embedding,
            layers,
            ln,
        })
    }
}

impl Backbone for VitB16 {
    fn cam_layer(&self) -> &'static str {
        "encoder.layers.encoder_layer_10"
    }

    fn to_cam_layer(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let b = x.dim(0)?;
        let patches = self.conv_proj.forward(x)?.flatten_from(2)?.transpose(1, 2)?;
        let cls = self.class_token.broadcast_as((b, 1, DIM))?;
        let mut y = Tensor::cat(&[&cls, &patches], 1)?.broadcast_add(&self.pos_embedding)?;
        for layer in &self.layers[..=CAM_LAYER] {
            y = layer.forward(&y)?;
        }
        Ok(y)
    }

    fn pool_cam_layer(&self, a: &Tensor) -> candle_core::Result<Tensor> {
        let mut y = a.clone();
        for layer in &self.layers[CAM_LAYER + 1..] {
            y = layer.forward(&y)?;
        }
        self.ln.forward(&y)?.narrow(1, 0, 1)?.squeeze(1)
    }

    /// Patch tokens (class token dropped) as a `[B, 768, 14, 14]` grid.
    fn spatial_view(&self, a: &Tensor) -> candle_core::Result<Tensor> {
        let b = a.dim(0)?;
        a.narrow(1, 1, GRID * GRID)?.transpose(1, 2)?.reshape((b, DIM, GRID, GRID))
    }

    fn feature_dim(&self) -> usize {
        DIM
    }
}
