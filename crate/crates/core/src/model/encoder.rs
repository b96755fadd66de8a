//! The 3D CNN branch: stem and residual bottleneck blocks. Spatial
//! downsampling only; every temporal stride is 1 so the frame count survives
//! the whole encoder.

use rand_chacha::ChaCha8Rng;

use crate::element::Element;
use crate::error::Result;
use crate::tape::Var;

use super::{BatchNormLayer, Conv3dLayer, Fwd, ParamKind, Params};
use crate::tensor::Tensor;

/// 5x5 spatial conv (stride 2) + 3x3 spatial max-pool (stride 2), temporal
/// kernel 1. Total spatial stride 4, temporal passthrough.
pub struct Stem<T: Element> {
    pub conv: Conv3dLayer<T>,
    pub bn: BatchNormLayer<T>,
}

impl<T: Element> Stem<T> {
    pub fn init(name: &str, channels: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv: Conv3dLayer::init(
                format!("{name}.conv"),
                channels,
                1,
                (1, 5, 5),
                (1, 2, 2),
                (0, 2, 2),
                rng,
            ),
            bn: BatchNormLayer::init(format!("{name}.bn"), channels),
        }
    }

    pub fn forward(&self, fwd: &mut Fwd<'_, T>, clip: Var) -> Result<Var> {
        let x = self.conv.forward(fwd, clip)?;
        let x = self.bn.forward(fwd, x)?;
        let x = fwd.tape.relu(x)?;
        fwd.tape.max_pool3d(x, (1, 3, 3), (1, 2, 2), (0, 1, 1))
    }
}

impl<T: Element> Params<T> for Stem<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, ParamKind, &Tensor<T>)) {
        self.conv.visit(f);
        self.bn.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        self.conv.visit_mut(f);
        self.bn.visit_mut(f);
    }
}

/// Bottleneck residual block: 1x1x1 down, t x 3x3 (spatially strided on the
/// first block of a stage), 1x1x1 up, with a projection shortcut when shape
/// changes. The temporal kernel is centered and padded, never strided.
pub struct ConvBlock<T: Element> {
    pub conv1: Conv3dLayer<T>,
    pub bn1: BatchNormLayer<T>,
    pub conv2: Conv3dLayer<T>,
    pub bn2: BatchNormLayer<T>,
    pub conv3: Conv3dLayer<T>,
    pub bn3: BatchNormLayer<T>,
    pub shortcut: Option<(Conv3dLayer<T>, BatchNormLayer<T>)>,
}

impl<T: Element> ConvBlock<T> {
    pub fn init(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        temporal: usize,
        spatial_stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mid = (out_ch / 4).max(1);
        let tpad = temporal / 2;
        let conv1 = Conv3dLayer::init(format!("{name}.conv1"), mid, in_ch, (1, 1, 1), (1, 1, 1), (0, 0, 0), rng);
        let bn1 = BatchNormLayer::init(format!("{name}.bn1"), mid);
        let conv2 = Conv3dLayer::init(
            format!("{name}.conv2"),
            mid,
            mid,
            (temporal, 3, 3),
            (1, spatial_stride, spatial_stride),
            (tpad, 1, 1),
            rng,
        );
        let bn2 = BatchNormLayer::init(format!("{name}.bn2"), mid);
        let conv3 = Conv3dLayer::init(format!("{name}.conv3"), out_ch, mid, (1, 1, 1), (1, 1, 1), (0, 0, 0), rng);
        let bn3 = BatchNormLayer::init(format!("{name}.bn3"), out_ch);
        let shortcut = if in_ch != out_ch || spatial_stride != 1 {
            Some((
                Conv3dLayer::init(
                    format!("{name}.down.conv"),
                    out_ch,
                    in_ch,
                    (1, 1, 1),
                    (1, spatial_stride, spatial_stride),
                    (0, 0, 0),
                    rng,
                ),
                BatchNormLayer::init(format!("{name}.down.bn"), out_ch),
            ))
        } else {
            None
        };
        Self { conv1, bn1, conv2, bn2, conv3, bn3, shortcut }
    }

    pub fn forward(&self, fwd: &mut Fwd<'_, T>, x: Var) -> Result<Var> {
        let r = self.conv1.forward(fwd, x)?;
        let r = self.bn1.forward(fwd, r)?;
        let r = fwd.tape.relu(r)?;
        let r = self.conv2.forward(fwd, r)?;
        let r = self.bn2.forward(fwd, r)?;
        let r = fwd.tape.relu(r)?;
        let r = self.conv3.forward(fwd, r)?;
        let r = self.bn3.forward(fwd, r)?;
        let s = match &self.shortcut {
            Some((conv, bn)) => {
                let s = conv.forward(fwd, x)?;
                bn.forward(fwd, s)?
            }
            None => x,
        };
        let sum = fwd.tape.add(s, r)?;
        fwd.tape.relu(sum)
    }

    pub fn convs(&self) -> Vec<&Conv3dLayer<T>> {
        let mut v = vec![&self.conv1, &self.conv2, &self.conv3];
        if let Some((c, _)) = &self.shortcut {
            v.push(c);
        }
        v
    }
}

impl<T: Element> Params<T> for ConvBlock<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, ParamKind, &Tensor<T>)) {
        self.conv1.visit(f);
        self.bn1.visit(f);
        self.conv2.visit(f);
        self.bn2.visit(f);
        self.conv3.visit(f);
        self.bn3.visit(f);
        if let Some((c, b)) = &self.shortcut {
            c.visit(f);
            b.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        self.conv1.visit_mut(f);
        self.bn1.visit_mut(f);
        self.conv2.visit_mut(f);
        self.bn2.visit_mut(f);
        self.conv3.visit_mut(f);
        self.bn3.visit_mut(f);
        if let Some((c, b)) = &mut self.shortcut {
            c.visit_mut(f);
            b.visit_mut(f);
        }
    }
}
