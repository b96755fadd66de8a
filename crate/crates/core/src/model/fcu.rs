//! Feature coupling between the CNN feature maps and the token sequence,
//! plus the dual classification head.

use rand_chacha::ChaCha8Rng;

use crate::config::{ModelConfig, NUM_CLASSES};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::tape::Var;
use crate::tensor::Tensor;

use super::{BatchNormLayer, Conv3dLayer, Fwd, LayerNormLayer, LinearLayer, ParamKind, Params};

/// Per-frame bridge between a `[N, C, T, G, G]` feature map and the patch
/// tokens. Down: 1x1x1 conv to d, spatial resize to the n x n token grid,
/// layer norm, add onto patch tokens (CLS untouched). Up: token grid resized
/// back to the stage's resolution, 1x1x1 conv to C, batch norm, add onto the
/// feature map.
///
/// Resizing is average pooling while the stage grid is at least n, and
/// nearest-neighbor upsampling once the pyramid drops below the token grid.
pub struct Fcu<T: Element> {
    pub down_conv: Conv3dLayer<T>,
    pub down_ln: LayerNormLayer<T>,
    pub up_conv: Conv3dLayer<T>,
    pub up_bn: BatchNormLayer<T>,
    /// Stage grid side this unit couples with.
    grid: usize,
    token_grid: usize,
}

impl<T: Element> Fcu<T> {
    pub fn init(
        name: &str,
        channels: usize,
        grid: usize,
        cfg: &ModelConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let n = cfg.token_grid();
        if grid >= n {
            if grid % n != 0 {
                return Err(Error::Config(format!(
                    "{name}: stage grid {grid} not divisible by token grid {n}"
                )));
            }
        } else if n % grid != 0 {
            return Err(Error::Config(format!(
                "{name}: token grid {n} not divisible by stage grid {grid}"
            )));
        }
        let d = cfg.embed_dim;
        Ok(Self {
            down_conv: Conv3dLayer::init(
                format!("{name}.down.conv"),
                d,
                channels,
                (1, 1, 1),
                (1, 1, 1),
                (0, 0, 0),
                rng,
            ),
            down_ln: LayerNormLayer::init(format!("{name}.down.ln"), d),
            up_conv: Conv3dLayer::init(
                format!("{name}.up.conv"),
                channels,
                d,
                (1, 1, 1),
                (1, 1, 1),
                (0, 0, 0),
                rng,
            ),
            up_bn: BatchNormLayer::init(format!("{name}.up.bn"), channels),
            grid,
            token_grid: n,
        })
    }

    fn resize(&self, fwd: &mut Fwd<'_, T>, x: Var, from: usize, to: usize) -> Result<Var> {
        if from == to {
            Ok(x)
        } else if from > to {
            let f = from / to;
            fwd.tape.avg_pool3d(x, (1, f, f), (1, f, f))
        } else {
            let f = to / from;
            fwd.tape.upsample_nearest2d(x, f, f)
        }
    }

    /// CNN features into the token sequence.
    pub fn down(&self, fwd: &mut Fwd<'_, T>, feat: Var, z: Var) -> Result<Var> {
        let fs = fwd.tape.shape(feat).to_vec();
        let zs = fwd.tape.shape(z).to_vec();
        let (nb, t, g) = (fs[0], fs[2], fs[3]);
        if g != self.grid {
            return Err(Error::shape("fcu_down", format!("feature grid {g} vs configured {}", self.grid)));
        }
        let n = self.token_grid;
        if zs[1] != t * n * n + 1 {
            return Err(Error::shape(
                "fcu_down",
                format!("token length {} vs t*n^2+1 = {}", zs[1], t * n * n + 1),
            ));
        }
        let d = zs[2];

        let y = self.down_conv.forward(fwd, feat)?; // [N, d, T, g, g]
        let y = self.resize(fwd, y, g, n)?; // [N, d, T, n, n]
        let y = fwd.tape.permute(y, &[0, 2, 3, 4, 1])?; // [N, T, n, n, d]
        let y = fwd.tape.reshape(y, &[nb, t * n * n, d])?;
        let y = self.down_ln.forward(fwd, y)?;

        let cls = fwd.tape.slice(z, 1, 0, 1)?;
        let patches = fwd.tape.slice(z, 1, 1, t * n * n)?;
        let patches = fwd.tape.add(patches, y)?;
        fwd.tape.concat(&[cls, patches], 1)
    }

    /// Token sequence back onto the CNN features.
    pub fn up(&self, fwd: &mut Fwd<'_, T>, z: Var, feat: Var) -> Result<Var> {
        let fs = fwd.tape.shape(feat).to_vec();
        let zs = fwd.tape.shape(z).to_vec();
        let (nb, c, t, g) = (fs[0], fs[1], fs[2], fs[3]);
        if g != self.grid {
            return Err(Error::shape("fcu_up", format!("feature grid {g} vs configured {}", self.grid)));
        }
        let n = self.token_grid;
        if zs[1] != t * n * n + 1 {
            return Err(Error::shape(
                "fcu_up",
                format!("token length {} vs t*n^2+1 = {}", zs[1], t * n * n + 1),
            ));
        }
        let d = zs[2];

        let patches = fwd.tape.slice(z, 1, 1, t * n * n)?;
        let grid = fwd.tape.reshape(patches, &[nb, t, n, n, d])?;
        let grid = fwd.tape.permute(grid, &[0, 4, 1, 2, 3])?; // [N, d, T, n, n]
        let grid = self.resize(fwd, grid, n, g)?; // [N, d, T, g, g]
        let y = self.up_conv.forward(fwd, grid)?; // [N, C, T, g, g]
        let y = self.up_bn.forward(fwd, y)?;
        let _ = c;
        fwd.tape.add(feat, y)
    }
}

impl<T: Element> Params<T> for Fcu<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, ParamKind, &Tensor<T>)) {
        self.down_conv.visit(f);
        self.down_ln.visit(f);
        self.up_conv.visit(f);
        self.up_bn.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        self.down_conv.visit_mut(f);
        self.down_ln.visit_mut(f);
        self.up_conv.visit_mut(f);
        self.up_bn.visit_mut(f);
    }
}

/// Dual classifier: a conv head (global average pool + linear) and a token
/// head (layer norm of CLS + linear). Training losses are computed per head
/// and summed; inference averages the two logit vectors.
pub struct Heads<T: Element> {
    pub conv_fc: LinearLayer<T>,
    pub token_ln: LayerNormLayer<T>,
    pub token_fc: LinearLayer<T>,
}

impl<T: Element> Heads<T> {
    pub fn init(name: &str, conv_channels: usize, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv_fc: LinearLayer::init(format!("{name}.conv_fc"), NUM_CLASSES, conv_channels, rng),
            token_ln: LayerNormLayer::init(format!("{name}.token_ln"), cfg.embed_dim),
            token_fc: LinearLayer::init(format!("{name}.token_fc"), NUM_CLASSES, cfg.embed_dim, rng),
        }
    }

    /// Returns (conv logits, token logits, averaged logits, probs).
    pub fn forward(&self, fwd: &mut Fwd<'_, T>, feat: Var, z: Var) -> Result<(Var, Var, Var, Var)> {
        let pooled = fwd.tape.mean_axes(feat, &[2, 3, 4])?; // [N, C]
        let conv_logits = self.conv_fc.forward(fwd, pooled)?;

        let zs = fwd.tape.shape(z).to_vec();
        let cls = fwd.tape.slice(z, 1, 0, 1)?;
        let cls = fwd.tape.reshape(cls, &[zs[0], zs[2]])?;
        let cls = self.token_ln.forward(fwd, cls)?;
        let token_logits = self.token_fc.forward(fwd, cls)?;

        let sum = fwd.tape.add(conv_logits, token_logits)?;
        let logits = fwd.tape.mul_scalar(sum, T::of_f64(0.5))?;
        let probs = fwd.tape.softmax(logits, 1)?;
        Ok((conv_logits, token_logits, logits, probs))
    }
}

impl<T: Element> Params<T> for Heads<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, ParamKind, &Tensor<T>)) {
        self.conv_fc.visit(f);
        self.token_ln.visit(f);
        self.token_fc.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        self.conv_fc.visit_mut(f);
        self.token_ln.visit_mut(f);
        self.token_fc.visit_mut(f);
    }
}
