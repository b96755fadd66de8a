//! Model assembly: layer primitives with named parameters, the forward
//! context that binds them onto a tape, and the full hybrid classifier.

pub mod amdf;
pub mod encoder;
pub mod fcu;


use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::config::{ModelConfig, NUM_CLASSES};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

use amdf::{AmdfBlock, AmdfTrace, Tokenizer};
use encoder::{ConvBlock, Stem};
use fcu::{Fcu, Heads};

/// Whether a named tensor is trained or is a running statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    Stat,
}

/// Named-parameter traversal in fixed construction order.
pub trait Params<T: Element> {
    fn visit(&self, f: &mut dyn FnMut(&str, ParamKind, &Tensor<T>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>));
}

/// Forward-pass context: a tape plus the bookkeeping that training needs
/// (which leaf each parameter landed on, and pending batch-norm stat
/// updates).
pub struct Fwd<'t, T: Element> {
    pub tape: &'t mut Tape<T>,
    pub train: bool,
    binds: Vec<(String, Var)>,
    stat_updates: Vec<(String, Tensor<T>)>,
}

impl<'t, T: Element> Fwd<'t, T> {
    pub fn new(tape: &'t mut Tape<T>, train: bool) -> Self {
        Self { tape, train, binds: Vec::new(), stat_updates: Vec::new() }
    }

    /// Bind a parameter tensor as a leaf (grad-requiring in training mode).
    /// Repeated binds of one name reuse the same leaf.
    pub fn param(&mut self, name: &str, t: &Tensor<T>) -> Var {
        if let Some((_, v)) = self.binds.iter().find(|(n, _)| n == name) {
            return *v;
        }
        let v = self.tape.leaf(t, self.train);
        self.binds.push((name.to_string(), v));
        v
    }

    pub fn push_stat_update(&mut self, name: String, value: Tensor<T>) {
        self.stat_updates.push((name, value));
    }

    pub fn binds(&self) -> &[(String, Var)] {
        &self.binds
    }

    pub fn take_stat_updates(&mut self) -> Vec<(String, Tensor<T>)> {
        std::mem::take(&mut self.stat_updates)
    }
}

// ---------------------------------------------------------------------------
// Layer primitives
// ---------------------------------------------------------------------------

pub struct Conv3dLayer<T: Element> {
    pub name: String,
    pub weight: Tensor<T>,
    pub stride: (usize, usize, usize),
    pub padding: (usize, usize, usize),
}

impl<T: Element> Conv3dLayer<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        name: String,
        cout: usize,
        cin: usize,
        kernel: (usize, usize, usize),
        stride: (usize, usize, usize),
        padding: (usize, usize, usize),
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = cin * kernel.0 * kernel.1 * kernel.2;
        let std = (2.0 / fan_in as f64).sqrt();
        let weight = Tensor::randn(&[cout, cin, kernel.0, kernel.1, kernel.2], std, rng);
        Self { name, weight, stride, padding }
    }

    pub fn forward(&self, fwd: &mut Fwd<'_, T>, x: Var) -> Result<Var> {
        let w = fwd.param(&format!("{}.weight", self.name), &self.weight);
        fwd.tape.conv3d(x, w, self.stride, self.padding)
    }
}

impl<T: Element> Params<T> for Conv3dLayer<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, ParamKind, &Tensor<T>)) {
        f(&format!("{}.weight", self.name), ParamKind::Trainable, &self.weight);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        f(&format!("{}.weight", self.name), ParamKind::Trainable, &mut self.weight);
    }
}

pub struct BatchNormLayer<T: Element> {
    pub name: String,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
    pub momentum: f64,
}

impl<T: Element> BatchNormLayer<T> {
    pub fn init(name: String, channels: usize) -> Self {
        Self {
            name,
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn forward(&self, fwd: &mut Fwd<'_, T>, x: Var) -> Result<Var> {
        let g = fwd.param(&format!("{}.gamma", self.name), &self.gamma);
        let b = fwd.param(&format!("{}.beta", self.name), &self.beta);
        let (out, update) = fwd.tape.batch_norm(
            x,
            g,
            b,
            &self.running_mean,
            &self.running_var,
            fwd.train,
            self.eps,
        )?;
        if let Some(u) = update {
            let m = T::of_f64(self.momentum);
            let one_m = T::one() - m;
            let mut new_mean = self.running_mean.clone();
            let mut new_var = self.running_var.clone();
            for (dst, &b) in new_mean.data_mut().iter_mut().zip(u.mean.data()) {
                *dst = *dst * one_m + b * m;
            }
            for (dst, &b) in new_var.data_mut().iter_mut().zip(u.var.data()) {
                *dst = *dst * one_m + b * m;
            }
            fwd.push_stat_update(format!("{}.running_mean", self.name), new_mean);
            fwd.push_stat_update(format!("{}.running_var", self.name), new_var);
        }
        Ok(out)
    }
}

impl<T: Element> Params<T> for BatchNormLayer<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, ParamKind, &Tensor<T>)) {
        f(&format!("{}.gamma", self.name), ParamKind::Trainable, &self.gamma);
        f(&format!("{}.beta", self.name), ParamKind::Trainable, &self.beta);
        f(&format!("{}.running_mean", self.name), ParamKind::Stat, &self.running_mean);
        f(&format!("{}.running_var", self.name), ParamKind::Stat, &self.running_var);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        f(&format!("{}.gamma", self.name), ParamKind::Trainable, &mut self.gamma);
        f(&format!("{}.beta", self.name), ParamKind::Trainable, &mut self.beta);
        f(&format!("{}.running_mean", self.name), ParamKind::Stat, &mut self.running_mean);
        f(&format!("{}.running_var", self.name), ParamKind::Stat, &mut self.running_var);
    }
}

pub struct LinearLayer<T: Element> {
    pub name: String,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> LinearLayer<T> {
    pub fn init(name: String, out_f: usize, in_f: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            name,
            weight: Tensor::randn(&[out_f, in_f], 0.02, rng),
            bias: Tensor::zeros(&[out_f]),
        }
    }

    pub fn forward(&self, fwd: &mut Fwd<'_, T>, x: Var) -> Result<Var> {
        let w = fwd.param(&format!("{}.weight", self.name), &self.weight);
        let b = fwd.param(&format!("{}.bias", self.name), &self.bias);
        fwd.tape.linear(x, w, Some(b))
    }
}

impl<T: Element> Params<T> for LinearLayer<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, ParamKind, &Tensor<T>)) {
        f(&format!("{}.weight", self.name), ParamKind::Trainable, &self.weight);
        f(&format!("{}.bias", self.name), ParamKind::Trainable, &self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        f(&format!("{}.weight", self.name), ParamKind::Trainable, &mut self.weight);
        f(&format!("{}.bias", self.name), ParamKind::Trainable, &mut self.bias);
    }
}

pub struct LayerNormLayer<T: Element> {
    pub name: String,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub eps: f64,
}

impl<T: Element> LayerNormLayer<T> {
    pub fn init(name: String, dim: usize) -> Self {
        Self {
            name,
            gamma: Tensor::full(&[dim], T::one()),
            beta: Tensor::zeros(&[dim]),
            eps: 1e-6,
        }
    }

    pub fn forward(&self, fwd: &mut Fwd<'_, T>, x: Var) -> Result<Var> {
        let g = fwd.param(&format!("{}.gamma", self.name), &self.gamma);
        let b = fwd.param(&format!("{}.beta", self.name), &self.beta);
        fwd.tape.layer_norm(x, g, b, self.eps)
    }
}

impl<T: Element> Params<T> for LayerNormLayer<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, ParamKind, &Tensor<T>)) {
        f(&format!("{}.gamma", self.name), ParamKind::Trainable, &self.gamma);
        f(&format!("{}.beta", self.name), ParamKind::Trainable, &self.beta);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        f(&format!("{}.gamma", self.name), ParamKind::Trainable, &mut self.gamma);
        f(&format!("{}.beta", self.name), ParamKind::Trainable, &mut self.beta);
    }
}

// ---------------------------------------------------------------------------
// Full model
// ---------------------------------------------------------------------------

/// Where a conv layer sits, for inflation planning.
#[derive(Debug, Clone)]
pub struct ConvLayerSpec {
    /// Parameter name of the kernel (ends in `.weight`).
    pub name: String,
    /// Stage tag 1..=5.
    pub stage: usize,
    /// Temporal extent this layer has in the current model.
    pub temporal: usize,
}

/// The hybrid video classifier: stem, residual 3D conv blocks coupled
/// per-block with AMDF transformer blocks through feature-coupling units,
/// and a dual classification head.
pub struct Model<T: Element> {
    pub config: ModelConfig,
    pub stem: Stem<T>,
    pub tokenizer: Tokenizer<T>,
    /// First AMDF block, ahead of the first conv block.
    pub amdf_head: AmdfBlock<T>,
    /// One entry per conv block: the block, its coupling unit, and the AMDF
    /// block that follows it.
    pub trunk: Vec<TrunkEntry<T>>,
    pub heads: Heads<T>,
}

pub struct TrunkEntry<T: Element> {
    pub stage: usize,
    pub block: ConvBlock<T>,
    pub fcu: Fcu<T>,
    pub amdf: AmdfBlock<T>,
}

/// Everything a forward pass produces, for tests and the classifier alike.
pub struct ForwardOutput<T: Element> {
    /// Stage outputs c1..c5 (c1 is the stem output).
    pub stage_outputs: Vec<Var>,
    /// Final token sequence `[N, t*n^2+1, d]`.
    pub tokens: Var,
    pub conv_logits: Var,
    pub token_logits: Var,
    /// `0.5 * (conv + token)` logits.
    pub logits: Var,
    pub probs: Var,
    pub amdf_traces: Vec<AmdfTrace>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Element> Model<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init(config, &mut rng)
    }

    fn init(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let cfg = config.clone();
        let stem = Stem::init("stem", cfg.channels[0], rng);
        let tokenizer = Tokenizer::init("tokenizer", &cfg, rng);
        let amdf_head = AmdfBlock::init("amdf0", &cfg, rng);

        let mut trunk = Vec::new();
        let mut grid = cfg.stem_grid();
        let mut in_ch = cfg.channels[0];
        let mut amdf_idx = 1usize;
        let mut block_idx = 0usize;
        for stage in 2..=5usize {
            let out_ch = cfg.channels[stage - 1];
            let entry_stride = if stage == 2 { 1 } else { 2 };
            let temporal = if stage >= 3 { cfg.temporal_kernel } else { 1 };
            for b in 0..cfg.conv_blocks {
                let stride = if b == 0 { entry_stride } else { 1 };
                if b == 0 {
                    grid /= entry_stride;
                }
                let block = ConvBlock::init(
                    &format!("c{stage}.block{b}"),
                    in_ch,
                    out_ch,
                    temporal,
                    stride,
                    rng,
                );
                let fcu = Fcu::init(&format!("fcu{block_idx}"), out_ch, grid, &cfg, rng)?;
                let amdf = AmdfBlock::init(&format!("amdf{amdf_idx}"), &cfg, rng);
                trunk.push(TrunkEntry { stage, block, fcu, amdf });
                in_ch = out_ch;
                amdf_idx += 1;
                block_idx += 1;
            }
        }
        let heads = Heads::init("head", cfg.channels[4], &cfg, rng);
        Ok(Self { config: cfg, stem, tokenizer, amdf_head, trunk, heads })
    }

    fn is_stage_last(&self, i: usize) -> bool {
        self.trunk
            .get(i + 1)
            .map(|next| next.stage != self.trunk[i].stage)
            .unwrap_or(true)
    }

    pub fn num_conv_blocks(&self) -> usize {
        self.trunk.len()
    }

    pub fn num_amdf_blocks(&self) -> usize {
        1 + self.trunk.len()
    }

    /// Conv-encoder-only forward: stem plus the residual blocks, no token
    /// path. Returns the c1..c5 stage outputs.
    pub fn encoder_forward(&self, fwd: &mut Fwd<'_, T>, clip: Var) -> Result<Vec<Var>> {
        let mut outs = Vec::with_capacity(5);
        let mut x = self.stem.forward(fwd, clip)?;
        outs.push(x);
        let t_in = fwd.tape.shape(clip)[2];
        for (i, entry) in self.trunk.iter().enumerate() {
            x = entry.block.forward(fwd, x)?;
            debug_assert_eq!(fwd.tape.shape(x)[2], t_in, "temporal length must be preserved");
            if self.is_stage_last(i) {
                outs.push(x);
            }
        }
        Ok(outs)
    }

    /// Full coupled forward pass.
    pub fn forward(&self, fwd: &mut Fwd<'_, T>, clip: Var, labels: Option<&[usize]>) -> Result<(ForwardOutput<T>, Option<Var>)> {
        let shape = fwd.tape.shape(clip).to_vec();
        if shape.len() != 5 || shape[1] != 1 {
            return Err(Error::shape(
                "model",
                format!("clip must be [N, 1, T, H, W], got {shape:?}"),
            ));
        }
        let t = shape[2];
        if t != self.config.frames {
            return Err(Error::shape(
                "model",
                format!("clip has {t} frames but the model is configured for {}", self.config.frames),
            ));
        }

        let mut stage_outputs = Vec::with_capacity(5);
        let mut traces = Vec::with_capacity(self.num_amdf_blocks());

        let mut x = self.stem.forward(fwd, clip)?;
        stage_outputs.push(x);
        let mut z = self.tokenizer.forward(fwd, x)?;
        let (z2, trace) = self.amdf_head.forward(fwd, z)?;
        z = z2;
        traces.push(trace);

        for (i, entry) in self.trunk.iter().enumerate() {
            x = entry.block.forward(fwd, x)?;
            z = entry.fcu.down(fwd, x, z)?;
            let (z2, trace) = entry.amdf.forward(fwd, z)?;
            z = z2;
            traces.push(trace);
            x = entry.fcu.up(fwd, z, x)?;
            if self.is_stage_last(i) {
                stage_outputs.push(x);
            }
        }

        let (conv_logits, token_logits, logits, probs) = self.heads.forward(fwd, x, z)?;
        let loss = match labels {
            Some(y) => {
                let lc = fwd.tape.cross_entropy(conv_logits, y)?;
                let lt = fwd.tape.cross_entropy(token_logits, y)?;
                Some(fwd.tape.add(lc, lt)?)
            }
            None => None,
        };
        Ok((
            ForwardOutput {
                stage_outputs,
                tokens: z,
                conv_logits,
                token_logits,
                logits,
                probs,
                amdf_traces: traces,
                _marker: std::marker::PhantomData,
            },
            loss,
        ))
    }

    /// All conv layers with their stage tags and current temporal extents.
    pub fn conv_layer_specs(&self) -> Vec<ConvLayerSpec> {
        let mut specs = vec![ConvLayerSpec {
            name: format!("{}.weight", self.stem.conv.name),
            stage: 1,
            temporal: self.stem.conv.weight.shape()[2],
        }];
        for entry in &self.trunk {
            for conv in entry.block.convs() {
                specs.push(ConvLayerSpec {
                    name: format!("{}.weight", conv.name),
                    stage: entry.stage,
                    temporal: conv.weight.shape()[2],
                });
            }
            specs.push(ConvLayerSpec {
                name: format!("{}.weight", entry.fcu.down_conv.name),
                stage: entry.stage,
                temporal: entry.fcu.down_conv.weight.shape()[2],
            });
            specs.push(ConvLayerSpec {
                name: format!("{}.weight", entry.fcu.up_conv.name),
                stage: entry.stage,
                temporal: entry.fcu.up_conv.weight.shape()[2],
            });
        }
        specs
    }

    pub fn set_param(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let mut found = false;
        let mut err: Option<Error> = None;
        self.visit_mut(&mut |n, _, t| {
            if n == name {
                if t.shape() != value.shape() {
                    err = Some(Error::shape(
                        "set_param",
                        format!("{name}: {:?} vs {:?}", t.shape(), value.shape()),
                    ));
                } else {
                    *t = value.clone();
                    found = true;
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if !found {
            return Err(Error::ParamMismatch(format!("no parameter named {name:?}")));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, kind, t| {
            if kind == ParamKind::Trainable {
                n += t.numel();
            }
        });
        n
    }

    /// Fold the batch-norm running-stat updates collected during a
    /// training-mode forward pass back into the layers.
    pub fn apply_stat_updates(&mut self, updates: Vec<(String, Tensor<T>)>) -> Result<()> {
        for (name, value) in updates {
            self.set_param(&name, value)?;
        }
        Ok(())
    }

    /// Snapshot every parameter and running statistic into the file
    /// container (always f32 on disk).
    pub fn to_checkpoint(&self) -> crate::checkpoint::Checkpoint {
        let mut c = crate::checkpoint::Checkpoint::new();
        self.visit(&mut |name, _, t| {
            c.insert(name, t.cast::<f32>()).expect("parameter names are unique");
        });
        c
    }

    /// Load a checkpoint produced by [`Model::to_checkpoint`]. The name sets
    /// must match exactly and every shape must agree; the error lists every
    /// difference.
    pub fn load_from_checkpoint(&mut self, ckpt: &crate::checkpoint::Checkpoint) -> Result<()> {
        let mut own: Vec<(String, Vec<usize>)> = Vec::new();
        self.visit(&mut |name, _, t| own.push((name.to_string(), t.shape().to_vec())));

        let mut diffs = Vec::new();
        for (name, shape) in &own {
            match ckpt.get(name) {
                None => diffs.push(format!("missing from checkpoint: {name}")),
                Some(t) if t.shape() != shape.as_slice() => diffs.push(format!(
                    "shape mismatch: {name}: model {:?} vs checkpoint {:?}",
                    shape,
                    t.shape()
                )),
                Some(_) => {}
            }
        }
        for name in ckpt.names() {
            if !own.iter().any(|(n, _)| n == name) {
                diffs.push(format!("unknown in model: {name}"));
            }
        }
        if !diffs.is_empty() {
            return Err(Error::ParamMismatch(diffs.join("\n")));
        }
        self.visit_mut(&mut |name, _, t| {
            *t = ckpt.get(name).expect("checked above").cast::<T>();
        });
        Ok(())
    }
}

impl<T: Element> Params<T> for Model<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, ParamKind, &Tensor<T>)) {
        self.stem.visit(f);
        self.tokenizer.visit(f);
        self.amdf_head.visit(f);
        for entry in &self.trunk {
            entry.block.visit(f);
            entry.fcu.visit(f);
            entry.amdf.visit(f);
        }
        self.heads.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        self.stem.visit_mut(f);
        self.tokenizer.visit_mut(f);
        self.amdf_head.visit_mut(f);
        for entry in &mut self.trunk {
            entry.block.visit_mut(f);
            entry.fcu.visit_mut(f);
            entry.amdf.visit_mut(f);
        }
        self.heads.visit_mut(f);
    }
}

pub const _NUM_CLASSES_CHECK: usize = NUM_CLASSES;
