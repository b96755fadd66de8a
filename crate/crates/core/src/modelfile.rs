//! Model files as written by the CLI: the parameter checkpoint plus one
//! extra `meta.config` entry carrying the run configuration text, so a
//! checkpoint alone is enough to rebuild the model for inference.

use std::path::Path;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;

pub const META_CONFIG: &str = "meta.config";

fn encode_text(text: &str) -> Tensor<f32> {
    let data: Vec<f32> = text.bytes().map(|b| b as f32).collect();
    Tensor::new(vec![data.len().max(1)], if data.is_empty() { vec![0.0] } else { data })
        .expect("byte buffer matches shape")
}

fn decode_text(t: &Tensor<f32>) -> Result<String> {
    let mut bytes = Vec::with_capacity(t.numel());
    for &v in t.data() {
        if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
            return Err(Error::Checkpoint("meta.config payload is not byte-valued".to_string()));
        }
        bytes.push(v as u8);
    }
    String::from_utf8(bytes).map_err(|_| Error::Checkpoint("meta.config is not UTF-8".to_string()))
}

/// Write parameters plus the embedded run config.
pub fn save_model_file(path: &Path, model: &Model<f32>, run: &RunConfig) -> Result<()> {
    let mut ckpt = model.to_checkpoint();
    ckpt.insert(META_CONFIG, encode_text(&run.to_text()))?;
    ckpt.save(path)
}

/// Read a model file's run config and parameter set without building the
/// model.
pub fn read_model_file(path: &Path) -> Result<(RunConfig, Checkpoint)> {
    let full = Checkpoint::load(path)?;
    let cfg_tensor = full
        .get(META_CONFIG)
        .ok_or_else(|| Error::Checkpoint(format!("{}: no {META_CONFIG} entry", path.display())))?;
    let run = RunConfig::parse(&decode_text(cfg_tensor)?)?;
    Ok((run, params_only(&full)?))
}

/// Build a model for `run` and load the stored parameters into it.
pub fn build_model(run: &RunConfig, params: &Checkpoint) -> Result<Model<f32>> {
    let mut model = Model::<f32>::new(&run.model, run.seed)?;
    model.load_from_checkpoint(params)?;
    Ok(model)
}

/// Read a model file back: the run config and a rebuilt model with the
/// stored parameters.
pub fn load_model_file(path: &Path) -> Result<(RunConfig, Model<f32>)> {
    let (run, params) = read_model_file(path)?;
    let model = build_model(&run, &params)?;
    Ok((run, model))
}

/// Like [`load_model_file`], but rebuilt for a different clip length.
/// Parameters are frame-count independent, so any frame count up to the
/// stored `max_frames` works.
pub fn load_model_file_for_frames(path: &Path, frames: usize) -> Result<(RunConfig, Model<f32>)> {
    let (mut run, params) = read_model_file(path)?;
    run.model.frames = frames;
    run.model.validate()?;
    let model = build_model(&run, &params)?;
    Ok((run, model))
}

/// Strip the metadata entry, leaving only parameters (what
/// [`Model::load_from_checkpoint`] expects).
pub fn params_only(ckpt: &Checkpoint) -> Result<Checkpoint> {
    let mut params = Checkpoint::new();
    for (name, t) in ckpt.iter() {
        if name != META_CONFIG {
            params.insert(name, t.clone())?;
        }
    }
    Ok(params)
}
