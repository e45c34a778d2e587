use image::RgbImage;
use tract_onnx::prelude::*;

use super::{EncoderConfig, FrameEncoder};
use crate::error::{D3Error, Result};
use crate::frames::FRAME_SIZE;

type Plan = Arc<TypedRunnableModel>;

/// ONNX image encoder: one `[1, 3, 224, 224]` float frame per forward pass.
pub struct OnnxEncoder {
    plan: Plan,
    mean: [f32; 3],
    std: [f32; 3],
    output_dim: usize,
}

fn model_err(e: impl std::fmt::Display) -> D3Error {
    D3Error::ModelError(e.to_string())
}

impl OnnxEncoder {
    pub fn load(cfg: &EncoderConfig) -> Result<Self> {
        let path = cfg
            .model_path
            .as_ref()
            .ok_or_else(|| D3Error::ConfigError("external_model encoder requires model_path".into()))?;
        if !path.is_file() {
            return Err(D3Error::ModelError(format!("model file {} not found", path.display())));
        }
        let side = FRAME_SIZE as usize;
        let mut model = tract_onnx::onnx()
            .model_for_path(path)
            .map_err(|e| model_err(format!("{}: {e}", path.display())))?
            .with_input_fact(0, f32::fact([1, 3, side, side]).into())
            .map_err(model_err)?;
        if let Some(name) = &cfg.output_name {
            model.select_outputs_by_name([name.as_str()]).map_err(model_err)?;
        }
        let plan = model
            .into_optimized()
            .and_then(|m| m.into_runnable())
            .map_err(|e| model_err(format!("model does not accept [1, 3, {side}, {side}] input: {e:#}")))?;
        let cast = |a: [f64; 3]| a.map(|v| v as f32);
        Ok(Self {
            plan,
            mean: cast(cfg.input_mean),
            std: cast(cfg.input_std),
            output_dim: cfg.output_dim,
        })
    }
}

impl FrameEncoder for OnnxEncoder {
    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn encode_frame(&self, frame: &RgbImage) -> Result<Vec<f64>> {
        let side = FRAME_SIZE as usize;
        if frame.dimensions() != (FRAME_SIZE, FRAME_SIZE) {
            return Err(D3Error::ShapeError(format!(
                "external model expects {side}x{side} frames, got {:?}",
                frame.dimensions()
            )));
        }
        let input: Tensor = tract_ndarray::Array4::from_shape_fn((1, 3, side, side), |(_, c, y, x)| {
            let v = f32::from(frame.get_pixel(x as u32, y as u32)[c]) / 255.0;
            (v - self.mean[c]) / self.std[c]
        })
        .into();
        let outputs = self.plan.run(tvec!(input.into())).map_err(model_err)?;
        let out = outputs
            .first()
            .ok_or_else(|| D3Error::ModelError("model produced no output".into()))?;
        let view = out.to_plain_array_view::<f32>().map_err(model_err)?;
        Ok(view.iter().map(|&v| f64::from(v)).collect())
    }
}
