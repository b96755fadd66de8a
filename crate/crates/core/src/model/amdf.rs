//! The AMDF transformer encoder: tokenization with a CLS token, parallel
//! intra-dimension spatial/temporal attention branches, inter-dimension
//! fusion (switched attention or CLS-query cross attention), and learnable
//! adaptive branch mixing.
//!
//! Token layout is `[N, t*n^2 + 1, d]` with CLS at index 0 and patch tokens
//! frame-major after it.

use rand_chacha::ChaCha8Rng;

use crate::config::{FusionMode, ModelConfig};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::tape::Var;
use crate::tensor::Tensor;

use super::{Fwd, LayerNormLayer, LinearLayer, ParamKind, Params};

/// Frame count and grid side of a token sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenGeom {
    pub t: usize,
    pub n: usize,
}

impl TokenGeom {
    pub fn seq_len(&self) -> usize {
        self.t * self.n * self.n + 1
    }
}

/// Attention probability maps recorded by one AMDF block, for inspection.
pub struct AmdfTrace {
    pub spatial_patch_probs: Var,
    pub spatial_cls_probs: Var,
    pub temporal_patch_probs: Var,
    pub temporal_cls_probs: Var,
    /// CA: CLS-query rows (spatial-target, temporal-target); SWA: the two
    /// full maps; NONE: empty.
    pub fusion_probs: Vec<Var>,
    /// Softmaxed `[w_s, w_t]`.
    pub mix_weights: Var,
}

// ---------------------------------------------------------------------------
// Tokenizer
// ---------------------------------------------------------------------------

/// Non-overlapping patch projection of stem features plus CLS and learned
/// factorized positional tables. The temporal table is allocated at
/// `max_frames` capacity and sliced to the clip length, so checkpoints stay
/// loadable across frame counts.
pub struct Tokenizer<T: Element> {
    pub proj: LinearLayer<T>,
    pub cls: Tensor<T>,
    pub pos_spatial: Tensor<T>,
    pub pos_temporal: Tensor<T>,
    name: String,
    patch: usize,
}

impl<T: Element> Tokenizer<T> {
    pub fn init(name: &str, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let n = cfg.token_grid();
        let d = cfg.embed_dim;
        let proj = LinearLayer::init(
            format!("{name}.proj"),
            d,
            cfg.patch * cfg.patch * cfg.channels[0],
            rng,
        );
        Self {
            proj,
            cls: Tensor::randn(&[1, 1, d], 0.02, rng),
            pos_spatial: Tensor::randn(&[n * n, d], 0.02, rng),
            pos_temporal: Tensor::randn(&[cfg.max_frames, d], 0.02, rng),
            name: name.to_string(),
            patch: cfg.patch,
        }
    }

    /// `[N, C, T, G, G]` stem features to `[N, T*n^2 + 1, d]` tokens.
    pub fn forward(&self, fwd: &mut Fwd<'_, T>, feat: Var) -> Result<Var> {
        let shape = fwd.tape.shape(feat).to_vec();
        if shape.len() != 5 || shape[3] != shape[4] {
            return Err(Error::shape("tokenize", format!("want [N,C,T,G,G], got {shape:?}")));
        }
        let (nb, c, t, g) = (shape[0], shape[1], shape[2], shape[3]);
        let p = self.patch;
        if g % p != 0 {
            return Err(Error::shape("tokenize", format!("grid {g} not divisible by patch {p}")));
        }
        let n = g / p;
        if t > self.pos_temporal.shape()[0] {
            return Err(Error::shape(
                "tokenize",
                format!("{t} frames exceed temporal table capacity {}", self.pos_temporal.shape()[0]),
            ));
        }

        // [N,C,T,G,G] -> [N,C,T,n,p,n,p] -> [N,T,n,n,p,p,C] -> [N, T*n^2, p^2*C]
        let split = fwd.tape.reshape(feat, &[nb, c, t, n, p, n, p])?;
        let arranged = fwd.tape.permute(split, &[0, 2, 3, 5, 4, 6, 1])?;
        let flat = fwd.tape.reshape(arranged, &[nb, t * n * n, p * p * c])?;
        let tokens = self.proj.forward(fwd, flat)?;

        // Positional tables, expanded to the frame-major patch layout.
        let ps = fwd.param(&format!("{}.pos_spatial", self.name), &self.pos_spatial);
        let ps_full = fwd.tape.repeat_axis(ps, 0, t)?; // [t*n^2, d]
        let pt = fwd.param(&format!("{}.pos_temporal", self.name), &self.pos_temporal);
        let pt_rows = fwd.tape.slice(pt, 0, 0, t)?;
        let d = fwd.tape.shape(tokens)[2];
        let pt_rows = fwd.tape.reshape(pt_rows, &[t, 1, d])?;
        let pt_rep = fwd.tape.repeat_axis(pt_rows, 1, n * n)?;
        let pt_full = fwd.tape.reshape(pt_rep, &[t * n * n, d])?;

        let tokens = fwd.tape.add_bcast(tokens, ps_full)?;
        let tokens = fwd.tape.add_bcast(tokens, pt_full)?;

        let cls = fwd.param(&format!("{}.cls", self.name), &self.cls);
        let cls = fwd.tape.repeat_axis(cls, 0, nb)?;
        fwd.tape.concat(&[cls, tokens], 1)
    }
}

impl<T: Element> Params<T> for Tokenizer<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, ParamKind, &Tensor<T>)) {
        self.proj.visit(f);
        f(&format!("{}.cls", self.name), ParamKind::Trainable, &self.cls);
        f(&format!("{}.pos_spatial", self.name), ParamKind::Trainable, &self.pos_spatial);
        f(&format!("{}.pos_temporal", self.name), ParamKind::Trainable, &self.pos_temporal);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        self.proj.visit_mut(f);
        f(&format!("{}.cls", self.name), ParamKind::Trainable, &mut self.cls);
        f(&format!("{}.pos_spatial", self.name), ParamKind::Trainable, &mut self.pos_spatial);
        f(&format!("{}.pos_temporal", self.name), ParamKind::Trainable, &mut self.pos_temporal);
    }
}

// ---------------------------------------------------------------------------
// Factorized attention
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchKind {
    Spatial,
    Temporal,
}

/// `[N, S, d] -> [N, heads, S, dh]`.
fn to_heads<T: Element>(fwd: &mut Fwd<'_, T>, x: Var, heads: usize) -> Result<Var> {
    let s = fwd.tape.shape(x).to_vec();
    let (nb, sl, d) = (s[0], s[1], s[2]);
    let dh = d / heads;
    let r = fwd.tape.reshape(x, &[nb, sl, heads, dh])?;
    fwd.tape.permute(r, &[0, 2, 1, 3])
}

/// `[N, heads, S, dh] -> [N, S, d]`.
fn from_heads<T: Element>(fwd: &mut Fwd<'_, T>, x: Var) -> Result<Var> {
    let s = fwd.tape.shape(x).to_vec();
    let (nb, h, sl, dh) = (s[0], s[1], s[2], s[3]);
    let r = fwd.tape.permute(x, &[0, 2, 1, 3])?;
    fwd.tape.reshape(r, &[nb, sl, h * dh])
}

/// Scaled dot-product attention over already-headed tensors with arbitrary
/// equal leading batch axes: `q [.., Sq, dh]`, `k/v [.., Skv, dh]`.
fn attention<T: Element>(
    fwd: &mut Fwd<'_, T>,
    q: Var,
    k: Var,
    v: Var,
    qk_tag: &'static str,
    av_tag: &'static str,
) -> Result<(Var, Var)> {
    let rank = fwd.tape.shape(k).len();
    let dh = fwd.tape.shape(k)[rank - 1];
    let mut perm: Vec<usize> = (0..rank).collect();
    perm.swap(rank - 1, rank - 2);
    let kt = fwd.tape.permute(k, &perm)?;
    let scores = fwd.tape.matmul_tagged(q, kt, qk_tag)?;
    let scaled = fwd.tape.mul_scalar(scores, T::of_f64(1.0 / (dh as f64).sqrt()))?;
    let probs = fwd.tape.softmax(scaled, rank - 1)?;
    let out = fwd.tape.matmul_tagged(probs, v, av_tag)?;
    Ok((out, probs))
}

/// Divided attention: each patch token attends to its own frame's tokens
/// (spatial) or to its grid position across frames (temporal), plus CLS;
/// the CLS query attends to every token. Returns output and the (patch, cls)
/// probability maps.
fn factorized_attention<T: Element>(
    fwd: &mut Fwd<'_, T>,
    q: Var,
    k: Var,
    v: Var,
    kind: BranchKind,
    geom: TokenGeom,
    heads: usize,
) -> Result<(Var, Var, Var)> {
    let (t, n) = (geom.t, geom.n);
    let nn = n * n;
    let s = fwd.tape.shape(q).to_vec();
    let (nb, sl, d) = (s[0], s[1], s[2]);
    if sl != geom.seq_len() {
        return Err(Error::shape(
            "factorized_attention",
            format!("sequence {sl} vs geometry {}", geom.seq_len()),
        ));
    }
    let dh = d / heads;

    let q_cls = fwd.tape.slice(q, 1, 0, 1)?;
    let q_pat = fwd.tape.slice(q, 1, 1, t * nn)?;
    let k_cls = fwd.tape.slice(k, 1, 0, 1)?;
    let k_pat = fwd.tape.slice(k, 1, 1, t * nn)?;
    let v_cls = fwd.tape.slice(v, 1, 0, 1)?;
    let v_pat = fwd.tape.slice(v, 1, 1, t * nn)?;

    // Arrange patch q/k/v into groups of `group` tokens over `batch` groups.
    let (_, groups) = match kind {
        BranchKind::Spatial => (nn, t),
        BranchKind::Temporal => (t, nn),
    };
    let arrange = |fwd: &mut Fwd<'_, T>, x: Var| -> Result<Var> {
        let r = fwd.tape.reshape(x, &[nb, t, nn, heads, dh])?;
        match kind {
            // [N, t, heads, nn, dh]
            BranchKind::Spatial => fwd.tape.permute(r, &[0, 1, 3, 2, 4]),
            // [N, nn, heads, t, dh]
            BranchKind::Temporal => fwd.tape.permute(r, &[0, 2, 3, 1, 4]),
        }
    };
    let qg = arrange(fwd, q_pat)?;
    let kg = arrange(fwd, k_pat)?;
    let vg = arrange(fwd, v_pat)?;

    // CLS key/value broadcast into every group.
    let spread_cls = |fwd: &mut Fwd<'_, T>, x: Var| -> Result<Var> {
        let r = fwd.tape.reshape(x, &[nb, 1, heads, dh])?;
        let r = fwd.tape.permute(r, &[0, 2, 1, 3])?; // [N, heads, 1, dh]
        let r = fwd.tape.reshape(r, &[nb, 1, heads, 1, dh])?;
        fwd.tape.repeat_axis(r, 1, groups)
    };
    let kc = spread_cls(fwd, k_cls)?;
    let vc = spread_cls(fwd, v_cls)?;
    let k_grp = fwd.tape.concat(&[kc, kg], 3)?; // [N, groups, heads, 1+group, dh]
    let v_grp = fwd.tape.concat(&[vc, vg], 3)?;

    let (pat_out, pat_probs) = attention(fwd, qg, k_grp, v_grp, "attn_qk", "attn_av")?;
    // Back to [N, t*nn, d].
    let pat_out = match kind {
        BranchKind::Spatial => fwd.tape.permute(pat_out, &[0, 1, 3, 2, 4])?,
        BranchKind::Temporal => fwd.tape.permute(pat_out, &[0, 3, 1, 2, 4])?,
    };
    let pat_out = fwd.tape.reshape(pat_out, &[nb, t * nn, d])?;

    // CLS attends over the full sequence.
    let qc = to_heads(fwd, q_cls, heads)?; // [N, heads, 1, dh]
    let ka = to_heads(fwd, k, heads)?; // [N, heads, S, dh]
    let va = to_heads(fwd, v, heads)?;
    let (cls_out, cls_probs) = attention(fwd, qc, ka, va, "attn_qk", "attn_av")?;
    let cls_out = from_heads(fwd, cls_out)?; // [N, 1, d]

    let out = fwd.tape.concat(&[cls_out, pat_out], 1)?;
    Ok((out, pat_probs, cls_probs))
}

// ---------------------------------------------------------------------------
// Intra-dimension branch
// ---------------------------------------------------------------------------

/// Pre-norm transformer sublayer pair with divided attention:
/// `u = z + MHSA(LN(z))`, `out = u + FFN(LN(u))`.
pub struct Branch<T: Element> {
    pub kind: BranchKind,
    pub ln1: LayerNormLayer<T>,
    pub wq: LinearLayer<T>,
    pub wk: LinearLayer<T>,
    pub wv: LinearLayer<T>,
    pub wo: LinearLayer<T>,
    pub ln2: LayerNormLayer<T>,
    pub ffn1: LinearLayer<T>,
    pub ffn2: LinearLayer<T>,
}

impl<T: Element> Branch<T> {
    pub fn init(name: &str, kind: BranchKind, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.embed_dim;
        let hidden = cfg.ffn_ratio * d;
        Self {
            kind,
            ln1: LayerNormLayer::init(format!("{name}.ln1"), d),
            wq: LinearLayer::init(format!("{name}.q"), d, d, rng),
            wk: LinearLayer::init(format!("{name}.k"), d, d, rng),
            wv: LinearLayer::init(format!("{name}.v"), d, d, rng),
            wo: LinearLayer::init(format!("{name}.proj"), d, d, rng),
            ln2: LayerNormLayer::init(format!("{name}.ln2"), d),
            ffn1: LinearLayer::init(format!("{name}.ffn1"), hidden, d, rng),
            ffn2: LinearLayer::init(format!("{name}.ffn2"), d, hidden, rng),
        }
    }

    pub fn forward(
        &self,
        fwd: &mut Fwd<'_, T>,
        z: Var,
        geom: TokenGeom,
        heads: usize,
    ) -> Result<(Var, Var, Var)> {
        let h = self.ln1.forward(fwd, z)?;
        let q = self.wq.forward(fwd, h)?;
        let k = self.wk.forward(fwd, h)?;
        let v = self.wv.forward(fwd, h)?;
        let (att, pat_probs, cls_probs) = factorized_attention(fwd, q, k, v, self.kind, geom, heads)?;
        let att = self.wo.forward(fwd, att)?;
        let u = fwd.tape.add(z, att)?;

        let h2 = self.ln2.forward(fwd, u)?;
        let f = self.ffn1.forward(fwd, h2)?;
        let f = fwd.tape.gelu(f)?;
        let f = self.ffn2.forward(fwd, f)?;
        let out = fwd.tape.add(u, f)?;
        Ok((out, pat_probs, cls_probs))
    }
}

impl<T: Element> Params<T> for Branch<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, ParamKind, &Tensor<T>)) {
        self.ln1.visit(f);
        self.wq.visit(f);
        self.wk.visit(f);
        self.wv.visit(f);
        self.wo.visit(f);
        self.ln2.visit(f);
        self.ffn1.visit(f);
        self.ffn2.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        self.ln1.visit_mut(f);
        self.wq.visit_mut(f);
        self.wk.visit_mut(f);
        self.wv.visit_mut(f);
        self.wo.visit_mut(f);
        self.ln2.visit_mut(f);
        self.ffn1.visit_mut(f);
        self.ffn2.visit_mut(f);
    }
}

// ---------------------------------------------------------------------------
// Inter-dimension fusion
// ---------------------------------------------------------------------------

/// One direction of switched-attention fusion: the branch's own attention
/// map applied to the other branch's values.
pub struct SwaSide<T: Element> {
    pub ln: LayerNormLayer<T>,
    pub wq: LinearLayer<T>,
    pub wk: LinearLayer<T>,
    pub wv: LinearLayer<T>,
    pub wo: LinearLayer<T>,
}

impl<T: Element> SwaSide<T> {
    fn init(name: &str, d: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            ln: LayerNormLayer::init(format!("{name}.ln"), d),
            wq: LinearLayer::init(format!("{name}.q"), d, d, rng),
            wk: LinearLayer::init(format!("{name}.k"), d, d, rng),
            wv: LinearLayer::init(format!("{name}.v"), d, d, rng),
            wo: LinearLayer::init(format!("{name}.proj"), d, d, rng),
        }
    }
}

impl<T: Element> Params<T> for SwaSide<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, ParamKind, &Tensor<T>)) {
        self.ln.visit(f);
        self.wq.visit(f);
        self.wk.visit(f);
        self.wv.visit(f);
        self.wo.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        self.ln.visit_mut(f);
        self.wq.visit_mut(f);
        self.wk.visit_mut(f);
        self.wv.visit_mut(f);
        self.wo.visit_mut(f);
    }
}

/// Switched-attention fusion over two same-shape sequences: each side's
/// softmax(QK^T) consumes the other side's values, with a residual onto each
/// branch. Returns the fused pair and the two probability maps.
pub fn swa_fusion<T: Element>(
    fwd: &mut Fwd<'_, T>,
    side_s: &SwaSide<T>,
    side_t: &SwaSide<T>,
    zs: Var,
    zt: Var,
    heads: usize,
) -> Result<(Var, Var, Var, Var)> {
    let hs = side_s.ln.forward(fwd, zs)?;
    let ht = side_t.ln.forward(fwd, zt)?;
    let qs = side_s.wq.forward(fwd, hs)?;
    let ks = side_s.wk.forward(fwd, hs)?;
    let vs = side_s.wv.forward(fwd, hs)?;
    let qt = side_t.wq.forward(fwd, ht)?;
    let kt = side_t.wk.forward(fwd, ht)?;
    let vt = side_t.wv.forward(fwd, ht)?;

    let qs = to_heads(fwd, qs, heads)?;
    let ks = to_heads(fwd, ks, heads)?;
    let vs = to_heads(fwd, vs, heads)?;
    let qt = to_heads(fwd, qt, heads)?;
    let kt = to_heads(fwd, kt, heads)?;
    let vt = to_heads(fwd, vt, heads)?;

    // Own attention map, other branch's values.
    let (os, probs_s) = attention(fwd, qs, ks, vt, "fusion_qk", "fusion_av")?;
    let (ot, probs_t) = attention(fwd, qt, kt, vs, "fusion_qk", "fusion_av")?;
    let os = from_heads(fwd, os)?;
    let ot = from_heads(fwd, ot)?;
    let os = side_s.wo.forward(fwd, os)?;
    let ot = side_t.wo.forward(fwd, ot)?;
    let zs2 = fwd.tape.add(zs, os)?;
    let zt2 = fwd.tape.add(zt, ot)?;
    Ok((zs2, zt2, probs_s, probs_t))
}

/// One direction of cross-attention fusion: the target's CLS token is the
/// only query against the complementary sequence's keys/values, and the
/// result lands residually on the target's CLS alone.
pub struct CaSide<T: Element> {
    pub ln_q: LayerNormLayer<T>,
    pub ln_kv: LayerNormLayer<T>,
    pub wq: LinearLayer<T>,
    pub wk: LinearLayer<T>,
    pub wv: LinearLayer<T>,
    pub wo: LinearLayer<T>,
}

impl<T: Element> CaSide<T> {
    fn init(name: &str, d: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            ln_q: LayerNormLayer::init(format!("{name}.ln_q"), d),
            ln_kv: LayerNormLayer::init(format!("{name}.ln_kv"), d),
            wq: LinearLayer::init(format!("{name}.q"), d, d, rng),
            wk: LinearLayer::init(format!("{name}.k"), d, d, rng),
            wv: LinearLayer::init(format!("{name}.v"), d, d, rng),
            wo: LinearLayer::init(format!("{name}.proj"), d, d, rng),
        }
    }

    /// Apply this direction: `z_target`'s CLS queries all of `z_comp`.
    /// Returns the updated target sequence and the CLS-row probabilities
    /// `[N, heads, 1, S]`.
    pub fn apply(
        &self,
        fwd: &mut Fwd<'_, T>,
        z_target: Var,
        z_comp: Var,
        heads: usize,
    ) -> Result<(Var, Var)> {
        let s = fwd.tape.shape(z_target).to_vec();
        let (_nb, sl, _d) = (s[0], s[1], s[2]);
        let cls = fwd.tape.slice(z_target, 1, 0, 1)?;
        let rest = fwd.tape.slice(z_target, 1, 1, sl - 1)?;

        let qh = self.ln_q.forward(fwd, cls)?;
        let q = self.wq.forward(fwd, qh)?;
        let kvh = self.ln_kv.forward(fwd, z_comp)?;
        let k = self.wk.forward(fwd, kvh)?;
        let v = self.wv.forward(fwd, kvh)?;

        let q = to_heads(fwd, q, heads)?; // [N, h, 1, dh]
        let k = to_heads(fwd, k, heads)?;
        let v = to_heads(fwd, v, heads)?;
        let (o, probs) = attention(fwd, q, k, v, "fusion_qk", "fusion_av")?;
        let o = from_heads(fwd, o)?; // [N, 1, d]
        let o = self.wo.forward(fwd, o)?;
        let cls2 = fwd.tape.add(cls, o)?;
        let out = fwd.tape.concat(&[cls2, rest], 1)?;
        Ok((out, probs))
    }
}

impl<T: Element> Params<T> for CaSide<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, ParamKind, &Tensor<T>)) {
        self.ln_q.visit(f);
        self.ln_kv.visit(f);
        self.wq.visit(f);
        self.wk.visit(f);
        self.wv.visit(f);
        self.wo.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        self.ln_q.visit_mut(f);
        self.ln_kv.visit_mut(f);
        self.wq.visit_mut(f);
        self.wk.visit_mut(f);
        self.wv.visit_mut(f);
        self.wo.visit_mut(f);
    }
}

pub enum FusionParams<T: Element> {
    Swa { s: SwaSide<T>, t: SwaSide<T> },
    Ca { s: CaSide<T>, t: CaSide<T> },
    None,
}

impl<T: Element> Params<T> for FusionParams<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, ParamKind, &Tensor<T>)) {
        match self {
            Self::Swa { s, t } => {
                s.visit(f);
                t.visit(f);
            }
            Self::Ca { s, t } => {
                s.visit(f);
                t.visit(f);
            }
            Self::None => {}
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        match self {
            Self::Swa { s, t } => {
                s.visit_mut(f);
                t.visit_mut(f);
            }
            Self::Ca { s, t } => {
                s.visit_mut(f);
                t.visit_mut(f);
            }
            Self::None => {}
        }
    }
}

// ---------------------------------------------------------------------------
// AMDF block
// ---------------------------------------------------------------------------

/// Parallel spatial/temporal branches, inter-dimension fusion, and
/// softmax-normalized learnable mixing of the two branch outputs.
pub struct AmdfBlock<T: Element> {
    pub name: String,
    pub spatial: Branch<T>,
    pub temporal: Branch<T>,
    pub fusion: FusionParams<T>,
    /// Two learnable mixing logits `[a_s, a_t]`, initialized equal.
    pub mix_logits: Tensor<T>,
    pub heads: usize,
    pub geom: TokenGeom,
}

impl<T: Element> AmdfBlock<T> {
    pub fn init(name: &str, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.embed_dim;
        let fusion = match cfg.fusion {
            FusionMode::Swa => FusionParams::Swa {
                s: SwaSide::init(&format!("{name}.fusion.s"), d, rng),
                t: SwaSide::init(&format!("{name}.fusion.t"), d, rng),
            },
            FusionMode::Ca => FusionParams::Ca {
                s: CaSide::init(&format!("{name}.fusion.s"), d, rng),
                t: CaSide::init(&format!("{name}.fusion.t"), d, rng),
            },
            FusionMode::None => FusionParams::None,
        };
        Self {
            name: name.to_string(),
            spatial: Branch::init(&format!("{name}.spatial"), BranchKind::Spatial, cfg, rng),
            temporal: Branch::init(&format!("{name}.temporal"), BranchKind::Temporal, cfg, rng),
            fusion,
            mix_logits: Tensor::zeros(&[2]),
            heads: cfg.heads,
            geom: TokenGeom { t: cfg.frames, n: cfg.token_grid() },
        }
    }

    pub fn forward(&self, fwd: &mut Fwd<'_, T>, z: Var) -> Result<(Var, AmdfTrace)> {
        let (zs, sp_pat, sp_cls) = self.spatial.forward(fwd, z, self.geom, self.heads)?;
        let (zt, tm_pat, tm_cls) = self.temporal.forward(fwd, z, self.geom, self.heads)?;

        let (zs2, zt2, fusion_probs) = match &self.fusion {
            FusionParams::Swa { s, t } => {
                let (a, b, ps, pt) = swa_fusion(fwd, s, t, zs, zt, self.heads)?;
                (a, b, vec![ps, pt])
            }
            FusionParams::Ca { s, t } => {
                // Both directions: each branch's CLS queries the other branch.
                let (a, ps) = s.apply(fwd, zs, zt, self.heads)?;
                let (b, pt) = t.apply(fwd, zt, zs, self.heads)?;
                (a, b, vec![ps, pt])
            }
            FusionParams::None => (zs, zt, vec![]),
        };

        let logits = fwd.param(&format!("{}.mix_logits", self.name), &self.mix_logits);
        let weights = fwd.tape.softmax(logits, 0)?;
        let ws = fwd.tape.slice(weights, 0, 0, 1)?;
        let wt = fwd.tape.slice(weights, 0, 1, 1)?;
        let left = fwd.tape.scale_by(zs2, ws)?;
        let right = fwd.tape.scale_by(zt2, wt)?;
        let out = fwd.tape.add(left, right)?;

        Ok((
            out,
            AmdfTrace {
                spatial_patch_probs: sp_pat,
                spatial_cls_probs: sp_cls,
                temporal_patch_probs: tm_pat,
                temporal_cls_probs: tm_cls,
                fusion_probs,
                mix_weights: weights,
            },
        ))
    }
}

impl<T: Element> Params<T> for AmdfBlock<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, ParamKind, &Tensor<T>)) {
        self.spatial.visit(f);
        self.temporal.visit(f);
        self.fusion.visit(f);
        f(&format!("{}.mix_logits", self.name), ParamKind::Trainable, &self.mix_logits);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        self.spatial.visit_mut(f);
        self.temporal.visit_mut(f);
        self.fusion.visit_mut(f);
        f(&format!("{}.mix_logits", self.name), ParamKind::Trainable, &mut self.mix_logits);
    }
}
