//! Plain-text `key = value` configuration for the model and the training run.
//! `#` starts a comment; unknown keys are errors, as are duplicates.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// How the two intra-dimension branches exchange information each block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    /// Each branch applies its own attention map to the other branch's values.
    Swa,
    /// Each branch's CLS token queries the other branch's keys/values.
    Ca,
    /// Branches stay independent until the learnable mixing.
    None,
}

impl FusionMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "swa" => Ok(Self::Swa),
            "ca" => Ok(Self::Ca),
            "none" => Ok(Self::None),
            other => Err(Error::Config(format!("fusion must be swa|ca|none, got {other:?}"))),
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Swa => "swa",
            Self::Ca => "ca",
            Self::None => "none",
        })
    }
}

/// Parameter initialization for a training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    Scratch,
    /// Pretrain a single-frame model on individual frames, then inflate its
    /// weights into the video model.
    Inflated,
}

impl InitMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "scratch" => Ok(Self::Scratch),
            "inflated" => Ok(Self::Inflated),
            other => Err(Error::Config(format!("init must be scratch|inflated, got {other:?}"))),
        }
    }
}

impl fmt::Display for InitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Scratch => "scratch",
            Self::Inflated => "inflated",
        })
    }
}

/// Full architecture description. The default is the desk-scale test
/// configuration; larger settings (256 input, 12 heads, wider stages) are
/// expressed through the same fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Channels for stages c1..c5.
    pub channels: [usize; 5],
    /// Residual conv blocks per stage (c2..c5 each get this many).
    pub conv_blocks: usize,
    /// Token embedding width d.
    pub embed_dim: usize,
    /// Attention heads in every MHSA/MHCA.
    pub heads: usize,
    /// Patch side p on the stem grid.
    pub patch: usize,
    /// Temporal kernel size for the inflatable convs of c3..c5 (odd; 1 keeps
    /// the whole network per-frame).
    pub temporal_kernel: usize,
    pub fusion: FusionMode,
    /// Input H == W.
    pub input_size: usize,
    /// Frames per clip T.
    pub frames: usize,
    /// Capacity of the temporal positional table; checkpoints stay loadable
    /// across frame counts up to this bound.
    pub max_frames: usize,
    /// FFN hidden width = ffn_ratio * embed_dim.
    pub ffn_ratio: usize,
}

pub const NUM_CLASSES: usize = 2;

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: [16, 32, 64, 128, 256],
            conv_blocks: 1,
            embed_dim: 32,
            heads: 4,
            patch: 4,
            temporal_kernel: 3,
            fusion: FusionMode::Ca,
            input_size: 64,
            frames: 8,
            max_frames: 32,
            ffn_ratio: 2,
        }
    }
}

impl ModelConfig {
    /// Stem downsampling factor (conv stride 2, then pool stride 2).
    pub const STEM_STRIDE: usize = 4;

    /// Side of the stem feature grid.
    pub fn stem_grid(&self) -> usize {
        self.input_size / Self::STEM_STRIDE
    }

    /// Token grid side n.
    pub fn token_grid(&self) -> usize {
        self.stem_grid() / self.patch
    }

    /// Patch tokens per clip, t * n^2.
    pub fn patch_tokens(&self) -> usize {
        self.frames * self.token_grid() * self.token_grid()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.input_size % Self::STEM_STRIDE != 0 {
            return Err(Error::Config(format!(
                "input_size {} must be a positive multiple of the stem stride {}",
                self.input_size,
                Self::STEM_STRIDE
            )));
        }
        if self.patch == 0 || self.stem_grid() % self.patch != 0 {
            return Err(Error::Config(format!(
                "stem grid {} is not divisible by patch {}",
                self.stem_grid(),
                self.patch
            )));
        }
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "heads {} must divide embed_dim {}",
                self.heads, self.embed_dim
            )));
        }
        if self.temporal_kernel == 0 || self.temporal_kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "temporal_kernel {} must be odd so temporal length is preserved",
                self.temporal_kernel
            )));
        }
        if self.frames == 0 || self.frames > self.max_frames {
            return Err(Error::Config(format!(
                "frames {} must be in 1..={}",
                self.frames, self.max_frames
            )));
        }
        if self.conv_blocks == 0 || self.ffn_ratio == 0 {
            return Err(Error::Config("conv_blocks and ffn_ratio must be >= 1".to_string()));
        }
        if self.channels.iter().any(|&c| c == 0) {
            return Err(Error::Config("stage channels must be >= 1".to_string()));
        }
        Ok(())
    }

    /// The per-frame restriction of this architecture: every temporal kernel
    /// 1, single-frame clips. Parameter shapes stay compatible except for the
    /// temporal extent of inflatable conv kernels.
    pub fn per_frame(&self) -> Self {
        Self { temporal_kernel: 1, frames: 1, ..self.clone() }
    }
}

/// One training run: architecture plus optimizer settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub init: InitMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            lr: 1e-4,
            weight_decay: 1e-4,
            epochs: 100,
            batch_size: 4,
            seed: 0,
            init: InitMode::Scratch,
        }
    }
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| Error::Config(format!("{key}: expected an integer, got {v:?}")))
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse().map_err(|_| Error::Config(format!("{key}: expected a number, got {v:?}")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen: Vec<String> = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got {raw:?}", ln + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if value.is_empty() {
                return Err(Error::Config(format!("line {}: empty value for {key:?}", ln + 1)));
            }
            if seen.iter().any(|k| k == key) {
                return Err(Error::Config(format!("line {}: duplicate key {key:?}", ln + 1)));
            }
            seen.push(key.to_string());
            match key {
                "channels" => {
                    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                    if parts.len() != 5 {
                        return Err(Error::Config(format!(
                            "channels: expected 5 comma-separated values for c1..c5, got {value:?}"
                        )));
                    }
                    for (i, p) in parts.iter().enumerate() {
                        cfg.model.channels[i] = parse_usize("channels", p)?;
                    }
                }
                "conv_blocks" => cfg.model.conv_blocks = parse_usize(key, value)?,
                "embed_dim" => cfg.model.embed_dim = parse_usize(key, value)?,
                "heads" => cfg.model.heads = parse_usize(key, value)?,
                "patch" => cfg.model.patch = parse_usize(key, value)?,
                "temporal_kernel" => cfg.model.temporal_kernel = parse_usize(key, value)?,
                "fusion" => cfg.model.fusion = FusionMode::parse(value)?,
                "input_size" => cfg.model.input_size = parse_usize(key, value)?,
                "frames" => cfg.model.frames = parse_usize(key, value)?,
                "max_frames" => cfg.model.max_frames = parse_usize(key, value)?,
                "ffn_ratio" => cfg.model.ffn_ratio = parse_usize(key, value)?,
                "lr" => cfg.lr = parse_f64(key, value)?,
                "weight_decay" => cfg.weight_decay = parse_f64(key, value)?,
                "epochs" => cfg.epochs = parse_usize(key, value)?,
                "batch_size" => cfg.batch_size = parse_usize(key, value)?,
                "seed" => {
                    cfg.seed = value
                        .parse()
                        .map_err(|_| Error::Config(format!("seed: expected an integer, got {value:?}")))?;
                }
                "init" => cfg.init = InitMode::parse(value)?,
                other => return Err(Error::Config(format!("line {}: unknown key {other:?}", ln + 1))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("lr {} must be finite and >= 0", self.lr)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight_decay {} must be finite and >= 0", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".to_string()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Serialize every key in a fixed order.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        format!(
            "channels = {},{},{},{},{}\n\
             conv_blocks = {}\n\
             embed_dim = {}\n\
             heads = {}\n\
             patch = {}\n\
             temporal_kernel = {}\n\
             fusion = {}\n\
             input_size = {}\n\
             frames = {}\n\
             max_frames = {}\n\
             ffn_ratio = {}\n\
             lr = {}\n\
             weight_decay = {}\n\
             epochs = {}\n\
             batch_size = {}\n\
             seed = {}\n\
             init = {}\n",
            m.channels[0],
            m.channels[1],
            m.channels[2],
            m.channels[3],
            m.channels[4],
            m.conv_blocks,
            m.embed_dim,
            m.heads,
            m.patch,
            m.temporal_kernel,
            m.fusion,
            m.input_size,
            m.frames,
            m.max_frames,
            m.ffn_ratio,
            self.lr,
            self.weight_decay,
            self.epochs,
            self.batch_size,
            self.seed,
            self.init,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_echo_the_reference_training_recipe() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.lr, 1e-4);
        assert_eq!(cfg.weight_decay, 1e-4);
        assert_eq!(cfg.epochs, 100);
        assert_eq!(cfg.batch_size, 4);
    }

    #[test]
    fn roundtrip_preserves_values() {
        let mut cfg = RunConfig::default();
        cfg.lr = 2.5e-3;
        cfg.model.fusion = FusionMode::Swa;
        cfg.model.frames = 16;
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = RunConfig::parse("# hello\n\nlr = 0.01 # trailing\n").unwrap();
        assert_eq!(cfg.lr, 0.01);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let err = RunConfig::parse("learning_rate = 0.1\n").unwrap_err().to_string();
        assert!(err.contains("unknown key"), "{err}");
    }

    #[test]
    fn duplicate_keys_are_errors() {
        assert!(RunConfig::parse("lr = 0.1\nlr = 0.2\n").is_err());
    }

    #[test]
    fn heads_must_divide_embed_dim() {
        assert!(RunConfig::parse("embed_dim = 30\nheads = 4\n").is_err());
    }

    #[test]
    fn even_temporal_kernels_are_rejected() {
        assert!(RunConfig::parse("temporal_kernel = 2\n").is_err());
    }

    #[test]
    fn eight_and_sixteen_frame_clips_both_validate() {
        assert!(RunConfig::parse("frames = 8\n").is_ok());
        assert!(RunConfig::parse("frames = 16\n").is_ok());
        assert!(RunConfig::parse("frames = 0\n").is_err());
    }

    #[test]
    fn token_counts_match_the_shape_arithmetic() {
        let m = ModelConfig::default();
        // 64 input -> stem grid 16, patch 4 -> n = 4, 8 frames -> 128 + CLS.
        assert_eq!(m.token_grid(), 4);
        assert_eq!(m.patch_tokens() + 1, 129);

        let paper_scale = ModelConfig { input_size: 256, ..ModelConfig::default() };
        // 256 -> stem grid 64, patch 4 -> n = 16, 8 frames -> 2048 + CLS.
        assert_eq!(paper_scale.token_grid(), 16);
        assert_eq!(paper_scale.patch_tokens() + 1, 2049);
    }
}
