//! Grad-CAM through the model's last spatial feature layer, overlay PNGs
//! and text-grid map sidecars.

use std::fmt::Write as _;
use std::path::Path;

use candle_core::{IndexOp, Var};
use fluorodx_core::gradcam::{grad_cam, overlay, GradCamMap};
use fluorodx_core::loss::softmax2;
use fluorodx_core::{Image, Label};

use crate::error::{Error, Result};
use crate::io::{write_atomic, write_png};
use crate::zoo::ClassifierModel;

/// Blend weight of the heatmap in exported overlays.
pub const DEFAULT_ALPHA: f32 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub map: GradCamMap,
    /// Class probabilities in class-index order.
    pub probabilities: [f64; 2],
}

impl Explanation {
    pub fn predicted(&self) -> Label {
        if self.probabilities[1] > self.probabilities[0] {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

/// Grad-CAM map of `image` for `target` (default: the predicted class) at
/// the model's CAM layer. Gradients flow from the target logit back to that
/// layer only; model parameters are never touched.
pub fn explain(model: &ClassifierModel, image: &Image, target: Option<Label>) -> Result<Explanation> {
    let x = ClassifierModel::input_batch(&[image])?;
    let activations = Var::from_tensor(&model.cam_activations(&x)?.detach())?;
    let logits = model.head_logits(&model.features_from_cam(activations.as_tensor())?)?;
    let row = logits.i(0)?.to_vec1::<f32>()?;
    let probabilities = softmax2([f64::from(row[0]), f64::from(row[1])]);
    let target = target.unwrap_or(if probabilities[1] > probabilities[0] {
        Label::Positive
    } else {
        Label::Negative
    });
    let grads = logits.i((0, target.index()))?.backward()?;
    let grad = match grads.get(activations.as_tensor()) {
        Some(g) => g.clone(),
        None => activations.as_tensor().zeros_like()?,
    };
    let a = model.spatial_view(activations.as_tensor())?.i(0)?;
    let g = model.spatial_view(&grad)?.i(0)?;
    let (c, h, w) = a.dims3()?;
    let map = grad_cam(
        &a.flatten_all()?.to_vec1::<f32>()?,
        &g.flatten_all()?.to_vec1::<f32>()?,
        c,
        h,
        w,
        target.index(),
        model.cam_layer(),
    )
    .map_err(|e| Error::Contract(format!("grad-cam at {}: {e}", model.cam_layer())))?;
    Ok(Explanation { map, probabilities })
}

/// Header line then one line of space-separated raw values per map row.
pub fn map_to_text(map: &GradCamMap) -> String {
    let mut out = format!(
        "# layer={} target_class={} height={} width={}\n",
        map.layer_name, map.target_class, map.height, map.width
    );
    for row in map.values.chunks(map.width) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

/// Writes `<stem>.png` (overlay at [`DEFAULT_ALPHA`]) and `<stem>.cam.txt`.
pub fn write_explanation(explanation: &Explanation, image: &Image, overlay_path: &Path) -> Result<()> {
    write_png(&overlay(&explanation.map, image, DEFAULT_ALPHA), overlay_path)?;
    write_atomic(&overlay_path.with_extension("cam.txt"), map_to_text(&explanation.map).as_bytes())
}
