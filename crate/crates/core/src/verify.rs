//! Self-verification suite: gradient checks against finite differences,
//! the boring-video inflation oracle, attention equivalences and masks,
//! container round-trips, and metric cross-checks. The CLI `verify`
//! subcommand prints one line per check; the acceptance tests assert on the
//! same results.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::{FusionMode, ModelConfig};
use crate::error::{Error, Result};
use crate::gradcheck::{finite_diff_gradient, worst_mismatch};
use crate::inflate::inflate_checkpoint;
use crate::metrics::evaluate_metrics;
use crate::model::amdf::{AmdfBlock, Branch, BranchKind, FusionParams, TokenGeom};
use crate::model::{Fwd, Model, ParamKind, Params};
use crate::plan::InflationPlan;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub details: String,
    pub seconds: f64,
}

fn run_check(name: &'static str, f: impl FnOnce() -> Result<String>) -> CheckResult {
    let start = Instant::now();
    match f() {
        Ok(details) => CheckResult { name, passed: true, details, seconds: start.elapsed().as_secs_f64() },
        Err(e) => CheckResult {
            name,
            passed: false,
            details: e.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        },
    }
}

fn fail(msg: String) -> Error {
    Error::Training(msg)
}

// ---------------------------------------------------------------------------
// Primitive gradient checks
// ---------------------------------------------------------------------------

struct GradCase {
    name: String,
    shape: Vec<usize>,
    tol: f64,
    build: Box<dyn Fn(&mut Tape<f64>, Var) -> Result<Var>>,
}

/// Reduce any tensor to a scalar through a fixed random weighting, so every
/// output coordinate influences the loss.
fn weighted_sum(tape: &mut Tape<f64>, v: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(v).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::randn(&shape, 1.0, &mut rng);
    let wv = tape.constant(&w);
    let prod = tape.mul(v, wv)?;
    tape.sum_all(prod)
}

fn keep_away_from(t: Tensor<f64>, threshold: f64) -> Tensor<f64> {
    t.map(|v| if v.abs() < threshold { v + threshold * 2.0 * v.signum().max(0.5) } else { v })
}

fn primitive_cases(seed: u64) -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases: Vec<GradCase> = Vec::new();
    let mut push = |name: &str, shape: &[usize], tol: f64, build: Box<dyn Fn(&mut Tape<f64>, Var) -> Result<Var>>| {
        cases.push(GradCase { name: name.to_string(), shape: shape.to_vec(), tol, build });
    };
    let s = seed;

    let other = Tensor::randn(&[3, 4], 1.0, &mut rng);
    push("add", &[3, 4], 1e-4, Box::new(move |t, x| {
        let o = t.constant(&other);
        let y = t.add(x, o)?;
        weighted_sum(t, y, s)
    }));
    let other = Tensor::randn(&[3, 4], 1.0, &mut rng);
    push("sub", &[3, 4], 1e-4, Box::new(move |t, x| {
        let o = t.constant(&other);
        let y = t.sub(x, o)?;
        weighted_sum(t, y, s ^ 1)
    }));
    let other = Tensor::randn(&[3, 4], 1.0, &mut rng);
    push("mul", &[3, 4], 1e-4, Box::new(move |t, x| {
        let o = t.constant(&other);
        let y = t.mul(x, o)?;
        weighted_sum(t, y, s ^ 2)
    }));
    let big = Tensor::randn(&[2, 3, 4], 1.0, &mut rng);
    push("add_bcast.rhs", &[3, 4], 1e-4, Box::new(move |t, x| {
        let a = t.constant(&big);
        let y = t.add_bcast(a, x)?;
        weighted_sum(t, y, s ^ 3)
    }));
    push("add_scalar", &[5], 1e-4, Box::new(move |t, x| {
        let y = t.add_scalar(x, 0.37)?;
        weighted_sum(t, y, s ^ 4)
    }));
    push("mul_scalar", &[5], 1e-4, Box::new(move |t, x| {
        let y = t.mul_scalar(x, -1.3)?;
        weighted_sum(t, y, s ^ 5)
    }));
    let base = Tensor::randn(&[4, 3], 1.0, &mut rng);
    push("scale_by.scalar", &[1], 1e-4, Box::new(move |t, x| {
        let b = t.constant(&base);
        let y = t.scale_by(b, x)?;
        weighted_sum(t, y, s ^ 6)
    }));
    let scalar = Tensor::scalar(0.8);
    push("scale_by.tensor", &[4, 3], 1e-4, Box::new(move |t, x| {
        let sc = t.constant(&scalar);
        let y = t.scale_by(x, sc)?;
        weighted_sum(t, y, s ^ 7)
    }));
    push("relu", &[4, 5], 1e-4, Box::new(move |t, x| {
        let y = t.relu(x)?;
        weighted_sum(t, y, s ^ 8)
    }));
    push("gelu", &[4, 5], 1e-4, Box::new(move |t, x| {
        let y = t.gelu(x)?;
        weighted_sum(t, y, s ^ 9)
    }));
    push("softmax", &[3, 6], 1e-4, Box::new(move |t, x| {
        let y = t.softmax(x, 1)?;
        weighted_sum(t, y, s ^ 10)
    }));

    let gamma = Tensor::randn(&[6], 0.5, &mut rng).map(|v| v + 1.0);
    let beta = Tensor::randn(&[6], 0.5, &mut rng);
    let (g2, b2) = (gamma.clone(), beta.clone());
    push("layer_norm.x", &[4, 6], 1e-4, Box::new(move |t, x| {
        let g = t.constant(&g2);
        let b = t.constant(&b2);
        let y = t.layer_norm(x, g, b, 1e-6)?;
        weighted_sum(t, y, s ^ 11)
    }));
    let x_fixed = Tensor::randn(&[4, 6], 1.0, &mut rng);
    let (xf, bf) = (x_fixed.clone(), beta.clone());
    push("layer_norm.gamma", &[6], 1e-4, Box::new(move |t, g| {
        let x = t.constant(&xf);
        let b = t.constant(&bf);
        let y = t.layer_norm(x, g, b, 1e-6)?;
        weighted_sum(t, y, s ^ 12)
    }));
    let (xf2, gf2) = (x_fixed.clone(), gamma.clone());
    push("layer_norm.beta", &[6], 1e-4, Box::new(move |t, b| {
        let x = t.constant(&xf2);
        let g = t.constant(&gf2);
        let y = t.layer_norm(x, g, b, 1e-6)?;
        weighted_sum(t, y, s ^ 13)
    }));

    for training in [true, false] {
        let tag = if training { "train" } else { "eval" };
        let gamma = Tensor::randn(&[3], 0.3, &mut rng).map(|v| v + 1.0);
        let beta = Tensor::randn(&[3], 0.3, &mut rng);
        let rm = Tensor::randn(&[3], 0.3, &mut rng);
        let rv = Tensor::<f64>::randn(&[3], 0.2, &mut rng).map(|v| v.abs() + 0.7);
        push(&format!("batch_norm.{tag}.x"), &[2, 3, 2, 2, 2], 1e-4, Box::new(move |t, x| {
            let g = t.constant(&gamma);
            let b = t.constant(&beta);
            let (y, _) = t.batch_norm(x, g, b, &rm, &rv, training, 1e-5)?;
            weighted_sum(t, y, s ^ 14)
        }));
        let x_fixed = Tensor::randn(&[2, 3, 2, 2, 2], 1.0, &mut rng);
        let beta2 = Tensor::randn(&[3], 0.3, &mut rng);
        let rm2 = Tensor::randn(&[3], 0.3, &mut rng);
        let rv2 = Tensor::<f64>::randn(&[3], 0.2, &mut rng).map(|v| v.abs() + 0.7);
        push(&format!("batch_norm.{tag}.gamma"), &[3], 1e-4, Box::new(move |t, g| {
            let x = t.constant(&x_fixed);
            let b = t.constant(&beta2);
            let (y, _) = t.batch_norm(x, g, b, &rm2, &rv2, training, 1e-5)?;
            weighted_sum(t, y, s ^ 15)
        }));
    }

    let rhs = Tensor::randn(&[2, 4, 3], 1.0, &mut rng);
    push("matmul.lhs", &[2, 5, 4], 1e-4, Box::new(move |t, x| {
        let r = t.constant(&rhs);
        let y = t.matmul(x, r)?;
        weighted_sum(t, y, s ^ 16)
    }));
    let lhs = Tensor::randn(&[2, 5, 4], 1.0, &mut rng);
    push("matmul.rhs", &[2, 4, 3], 1e-4, Box::new(move |t, x| {
        let l = t.constant(&lhs);
        let y = t.matmul(l, x)?;
        weighted_sum(t, y, s ^ 17)
    }));

    let w = Tensor::randn(&[3, 4], 1.0, &mut rng);
    let b = Tensor::randn(&[3], 1.0, &mut rng);
    let (wf, bf) = (w.clone(), b.clone());
    push("linear.x", &[5, 4], 1e-4, Box::new(move |t, x| {
        let wv = t.constant(&wf);
        let bv = t.constant(&bf);
        let y = t.linear(x, wv, Some(bv))?;
        weighted_sum(t, y, s ^ 18)
    }));
    let x_lin = Tensor::randn(&[5, 4], 1.0, &mut rng);
    let (xl, bl) = (x_lin.clone(), b.clone());
    push("linear.w", &[3, 4], 1e-4, Box::new(move |t, w| {
        let xv = t.constant(&xl);
        let bv = t.constant(&bl);
        let y = t.linear(xv, w, Some(bv))?;
        weighted_sum(t, y, s ^ 19)
    }));
    let (xl2, wl2) = (x_lin.clone(), w.clone());
    push("linear.b", &[3], 1e-4, Box::new(move |t, b| {
        let xv = t.constant(&xl2);
        let wv = t.constant(&wl2);
        let y = t.linear(xv, wv, Some(b))?;
        weighted_sum(t, y, s ^ 20)
    }));

    let kernel = Tensor::randn(&[2, 2, 3, 3, 3], 0.5, &mut rng);
    push("conv3d.x", &[1, 2, 4, 5, 5], 1e-4, Box::new(move |t, x| {
        let k = t.constant(&kernel);
        let y = t.conv3d(x, k, (1, 2, 2), (1, 1, 1))?;
        weighted_sum(t, y, s ^ 21)
    }));
    let input = Tensor::randn(&[1, 2, 4, 5, 5], 1.0, &mut rng);
    push("conv3d.w", &[2, 2, 3, 3, 3], 1e-4, Box::new(move |t, w| {
        let x = t.constant(&input);
        let y = t.conv3d(x, w, (1, 1, 1), (1, 1, 1))?;
        weighted_sum(t, y, s ^ 22)
    }));

    push("avg_pool3d", &[1, 2, 4, 4, 4], 1e-4, Box::new(move |t, x| {
        let y = t.avg_pool3d(x, (1, 2, 2), (1, 2, 2))?;
        weighted_sum(t, y, s ^ 23)
    }));
    push("max_pool3d", &[1, 2, 4, 6, 6], 1e-4, Box::new(move |t, x| {
        let y = t.max_pool3d(x, (1, 3, 3), (1, 2, 2), (0, 1, 1))?;
        weighted_sum(t, y, s ^ 24)
    }));
    push("upsample_nearest2d", &[1, 2, 2, 3, 3], 1e-4, Box::new(move |t, x| {
        let y = t.upsample_nearest2d(x, 2, 2)?;
        weighted_sum(t, y, s ^ 25)
    }));
    push("reshape", &[2, 6], 1e-4, Box::new(move |t, x| {
        let y = t.reshape(x, &[3, 4])?;
        weighted_sum(t, y, s ^ 26)
    }));
    push("permute", &[2, 3, 4], 1e-4, Box::new(move |t, x| {
        let y = t.permute(x, &[2, 0, 1])?;
        weighted_sum(t, y, s ^ 27)
    }));
    let tail = Tensor::randn(&[2, 2, 3], 1.0, &mut rng);
    push("concat", &[2, 4, 3], 1e-4, Box::new(move |t, x| {
        let o = t.constant(&tail);
        let y = t.concat(&[x, o], 1)?;
        weighted_sum(t, y, s ^ 28)
    }));
    push("slice", &[2, 6, 3], 1e-4, Box::new(move |t, x| {
        let y = t.slice(x, 1, 2, 3)?;
        weighted_sum(t, y, s ^ 29)
    }));
    push("repeat_axis", &[2, 1, 3], 1e-4, Box::new(move |t, x| {
        let y = t.repeat_axis(x, 1, 4)?;
        weighted_sum(t, y, s ^ 30)
    }));
    push("mean_all", &[3, 4], 1e-4, Box::new(move |t, x| t.mean_all(x)));
    push("sum_all", &[3, 4], 1e-4, Box::new(move |t, x| t.sum_all(x)));
    push("mean_axes", &[2, 3, 2, 2, 2], 1e-4, Box::new(move |t, x| {
        let y = t.mean_axes(x, &[2, 3, 4])?;
        weighted_sum(t, y, s ^ 31)
    }));
    push("cross_entropy", &[4, 2], 1e-4, Box::new(move |t, x| t.cross_entropy(x, &[0, 1, 1, 0])));

    cases
}

/// Check every registered differentiable primitive on >= 5 random inputs at
/// f64 against central finite differences.
pub fn check_primitive_gradients() -> Result<String> {
    let mut worst_overall: (String, f64) = (String::new(), 0.0);
    for round in 0..5u64 {
        let cases = primitive_cases(round * 1000 + 17);
        for case in &cases {
            let mut rng = ChaCha8Rng::seed_from_u64(round * 7919 + 101);
            let mut x = Tensor::randn(&case.shape, 1.0, &mut rng);
            if case.name.starts_with("relu") || case.name.starts_with("max_pool") {
                x = keep_away_from(x, 0.05);
            }
            let mut tape = Tape::new();
            let leaf = tape.leaf(&x, true);
            let loss = (case.build)(&mut tape, leaf)?;
            let grads = tape.backward(loss)?;
            let analytic = grads
                .get(leaf)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(x.shape()));
            let numeric = finite_diff_gradient(
                |probe| {
                    let mut t = Tape::new();
                    let l = t.leaf(probe, true);
                    let loss = (case.build)(&mut t, l).expect("forward");
                    t.value(loss).item()
                },
                &x,
                1e-5,
            );
            let (_, a, n, err) = worst_mismatch(&analytic, &numeric);
            if err > case.tol {
                return Err(fail(format!(
                    "{}: relative error {err:.3e} exceeds {:.0e} (analytic {a:.6e} vs numeric {n:.6e}, round {round})",
                    case.name, case.tol
                )));
            }
            if err > worst_overall.1 {
                worst_overall = (case.name.clone(), err);
            }
        }
    }
    Ok(format!("worst relative error {:.3e} ({})", worst_overall.1, worst_overall.0))
}

/// The tiny full-model configuration used by the whole-network gradient
/// check: d=8, n=2, t=2, channels <= 8.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        channels: [4, 4, 8, 8, 8],
        conv_blocks: 1,
        embed_dim: 8,
        heads: 2,
        patch: 4,
        temporal_kernel: 3,
        fusion: FusionMode::Ca,
        input_size: 32,
        frames: 2,
        max_frames: 4,
        ffn_ratio: 2,
    }
}

/// Finite-difference check of every trainable parameter of the full tiny
/// model at f64, relative error < 1e-3.
pub fn check_full_model_gradients() -> Result<String> {
    let cfg = tiny_config();
    let mut model = Model::<f64>::new(&cfg, 77)?;
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    let clip = Tensor::randn(&[1, 1, cfg.frames, cfg.input_size, cfg.input_size], 1.0, &mut rng);
    let labels = vec![1usize];

    let loss_of = |model: &Model<f64>| -> Result<f64> {
        let mut tape = Tape::inference();
        let mut fwd = Fwd::new(&mut tape, true);
        let c = fwd.tape.constant(&clip);
        let (_, loss) = model.forward(&mut fwd, c, Some(&labels))?;
        Ok(tape.value(loss.expect("labels given")).item())
    };

    // Analytic gradients for every bound parameter.
    let mut tape = Tape::new();
    let mut fwd = Fwd::new(&mut tape, true);
    let c = fwd.tape.constant(&clip);
    let (_, loss) = model.forward(&mut fwd, c, Some(&labels))?;
    let binds = fwd.binds().to_vec();
    let grads = tape.backward(loss.expect("labels given"))?;
    let analytic: Vec<(String, Tensor<f64>)> = binds
        .iter()
        .map(|(name, var)| {
            let g = grads
                .get(*var)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(tape.value(*var).shape()));
            (name.clone(), g)
        })
        .collect();
    drop(tape);

    let h = 1e-5;
    let mut checked_params = 0usize;
    let mut worst = (String::new(), 0.0f64);
    let names: Vec<String> = analytic.iter().map(|(n, _)| n.clone()).collect();
    for name in &names {
        let ag = analytic.iter().find(|(n, _)| n == name).map(|(_, g)| g.clone()).unwrap();
        let mut base = None;
        model.visit(&mut |n, kind, t| {
            if n == name && kind == ParamKind::Trainable {
                base = Some(t.clone());
            }
        });
        let Some(base) = base else { continue }; // running stats are not trainable
        for i in 0..base.numel() {
            let bump = |delta: f64, model: &mut Model<f64>| {
                let mut t = base.clone();
                t.data_mut()[i] += delta;
                model.set_param(name, t).expect("parameter exists");
            };
            bump(h, &mut model);
            let lp = loss_of(&model)?;
            bump(-h, &mut model);
            let lm = loss_of(&model)?;
            bump(0.0, &mut model);
            let numeric = (lp - lm) / (2.0 * h);
            let a = ag.data()[i];
            let scale = a.abs().max(numeric.abs());
            let err = if scale < 1e-6 { (a - numeric).abs() } else { (a - numeric).abs() / scale };
            if err > 1e-3 {
                return Err(fail(format!(
                    "{name}[{i}]: relative error {err:.3e} (analytic {a:.6e} vs numeric {numeric:.6e})"
                )));
            }
            if err > worst.1 {
                worst = (format!("{name}[{i}]"), err);
            }
        }
        checked_params += 1;
    }
    Ok(format!(
        "{checked_params} parameter tensors ({} coordinates of model with {} trainables), worst {:.3e} at {}",
        analytic.iter().map(|(_, g)| g.numel()).sum::<usize>(),
        model.param_count(),
        worst.1,
        worst.0
    ))
}

// ---------------------------------------------------------------------------
// Boring-video inflation equivalence
// ---------------------------------------------------------------------------

pub fn check_boring_video() -> Result<String> {
    let cfg3d = ModelConfig::default();
    let cfg2d = cfg3d.per_frame();
    let mut model2d = Model::<f32>::new(&cfg2d, 42)?;
    // Calibrate running stats on data, like a genuinely pretrained source.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let batch = Tensor::<f32>::randn(&[2, 1, 1, 64, 64], 1.0, &mut rng);
        let mut tape = Tape::inference();
        let mut fwd = Fwd::new(&mut tape, true);
        let c = fwd.tape.constant(&batch);
        model2d.encoder_forward(&mut fwd, c)?;
        let updates = fwd.take_stat_updates();
        model2d.apply_stat_updates(updates)?;
    }
    let src = model2d.to_checkpoint();

    let mut model3d = Model::<f32>::new(&cfg3d, 43)?;
    let plan = InflationPlan::for_specs(&model3d.conv_layer_specs());
    plan.validate_against(&model3d.conv_layer_specs())?;
    let (inflated, _) = inflate_checkpoint(&src, &plan, &model3d.to_checkpoint())?;
    model3d.load_from_checkpoint(&inflated)?;

    let frame = Tensor::<f32>::randn(&[1, 1, 1, 64, 64], 1.0, &mut rng);
    let t_frames = cfg3d.frames;
    let mut clip = Tensor::zeros(&[1, 1, t_frames, 64, 64]);
    for f in 0..t_frames {
        clip.data_mut()[f * 64 * 64..(f + 1) * 64 * 64].copy_from_slice(frame.data());
    }

    let mut tape2 = Tape::inference();
    let mut fwd2 = Fwd::new(&mut tape2, false);
    let f2 = fwd2.tape.constant(&frame);
    let outs2d = model2d.encoder_forward(&mut fwd2, f2)?;
    let mut tape3 = Tape::inference();
    let mut fwd3 = Fwd::new(&mut tape3, false);
    let c3 = fwd3.tape.constant(&clip);
    let outs3d = model3d.encoder_forward(&mut fwd3, c3)?;

    let poisoned = [0usize, 0, 1, 2, 3];
    let mut worst = 0.0f64;
    for (stage, ((&o2, &o3), &pad)) in outs2d.iter().zip(&outs3d).zip(&poisoned).enumerate() {
        let v2 = tape2.value(o2);
        let v3 = tape3.value(o3);
        let s3 = v3.shape().to_vec();
        if s3[2] != t_frames {
            return Err(fail(format!("stage c{}: temporal length {} != {t_frames}", stage + 1, s3[2])));
        }
        let (c, h, w) = (s3[1], s3[3], s3[4]);
        let plane = h * w;
        for tt in pad..t_frames - pad {
            for ch in 0..c {
                let base3 = (ch * t_frames + tt) * plane;
                let base2 = ch * plane;
                for i in 0..plane {
                    let d = (v3.data()[base3 + i] as f64 - v2.data()[base2 + i] as f64).abs();
                    if d > worst {
                        worst = d;
                    }
                }
            }
        }
        if worst >= 1e-5 {
            return Err(fail(format!(
                "stage c{}: max abs diff {worst:.3e} >= 1e-5 at temporally valid positions",
                stage + 1
            )));
        }
    }
    Ok(format!("max abs diff {worst:.3e} across c1..c5 valid positions"))
}

// ---------------------------------------------------------------------------
// CA fusion equivalence + cost
// ---------------------------------------------------------------------------

pub fn check_ca_equivalence() -> Result<String> {
    let cfg = ModelConfig { fusion: FusionMode::Ca, embed_dim: 32, heads: 4, ..ModelConfig::default() };
    let geom = TokenGeom { t: cfg.frames, n: cfg.token_grid() };
    let sl = geom.seq_len();
    if sl != 129 {
        return Err(fail(format!("expected 129 tokens, got {sl}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0.0f64;
    for trial in 0..100u64 {
        let block = AmdfBlock::<f64>::init("blk", &cfg, &mut rng);
        let s_side = match &block.fusion {
            FusionParams::Ca { s, .. } => s,
            _ => unreachable!(),
        };
        let zs = Tensor::randn(&[1, sl, cfg.embed_dim], 1.0, &mut rng);
        let zt = Tensor::randn(&[1, sl, cfg.embed_dim], 1.0, &mut rng);

        let mut tape = Tape::new();
        let mut fwd = Fwd::new(&mut tape, false);
        let zsv = fwd.tape.constant(&zs);
        let ztv = fwd.tape.constant(&zt);
        let (out, _) = s_side.apply(&mut fwd, zsv, ztv, cfg.heads)?;
        let got = tape.value(out).data()[..cfg.embed_dim].to_vec();

        // Reference: full cross attention with all target rows as queries.
        let mut t2 = Tape::<f64>::new();
        let mut f2 = Fwd::new(&mut t2, false);
        let zsv2 = f2.tape.constant(&zs);
        let ztv2 = f2.tape.constant(&zt);
        let all_q = s_side.ln_q.forward(&mut f2, zsv2)?;
        let q = s_side.wq.forward(&mut f2, all_q)?;
        let kv = s_side.ln_kv.forward(&mut f2, ztv2)?;
        let k = s_side.wk.forward(&mut f2, kv)?;
        let v = s_side.wv.forward(&mut f2, kv)?;
        let dh = cfg.embed_dim / cfg.heads;
        let to_h = |f2: &mut Fwd<'_, f64>, x: Var| -> Result<Var> {
            let r = f2.tape.reshape(x, &[1, sl, cfg.heads, dh])?;
            f2.tape.permute(r, &[0, 2, 1, 3])
        };
        let qh = to_h(&mut f2, q)?;
        let kh = to_h(&mut f2, k)?;
        let vh = to_h(&mut f2, v)?;
        let ktr = f2.tape.permute(kh, &[0, 1, 3, 2])?;
        let scores = f2.tape.matmul(qh, ktr)?;
        let scores = f2.tape.mul_scalar(scores, 1.0 / (dh as f64).sqrt())?;
        let probs = f2.tape.softmax(scores, 3)?;
        let o = f2.tape.matmul(probs, vh)?;
        let o = f2.tape.permute(o, &[0, 2, 1, 3])?;
        let o = f2.tape.reshape(o, &[1, sl, cfg.embed_dim])?;
        let o = s_side.wo.forward(&mut f2, o)?;
        let full = f2.tape.add(zsv2, o)?;
        let want = &t2.value(full).data()[..cfg.embed_dim];

        for (a, b) in got.iter().zip(want) {
            let d = (a - b).abs();
            if d > worst {
                worst = d;
            }
        }
        if worst > 1e-6 {
            return Err(fail(format!("trial {trial}: CLS row differs by {worst:.3e} > 1e-6")));
        }
    }

    // Cost ratio at N=129, measured through the counter.
    let block = AmdfBlock::<f64>::init("blk", &cfg, &mut rng);
    let s_side = match &block.fusion {
        FusionParams::Ca { s, .. } => s,
        _ => unreachable!(),
    };
    let zs = Tensor::randn(&[1, sl, cfg.embed_dim], 1.0, &mut rng);
    let zt = Tensor::randn(&[1, sl, cfg.embed_dim], 1.0, &mut rng);
    let mut tape = Tape::<f64>::new();
    let mut fwd = Fwd::new(&mut tape, false);
    let zsv = fwd.tape.constant(&zs);
    let ztv = fwd.tape.constant(&zt);
    s_side.apply(&mut fwd, zsv, ztv, cfg.heads)?;
    let ca_cost = tape.counter().of("fusion_qk") + tape.counter().of("fusion_av");
    let full_cost = ca_cost * sl as u64; // one query row vs all sl rows
    let ratio = ca_cost as f64 / full_cost as f64;
    if ratio > 0.01 {
        return Err(fail(format!("QK/AV cost ratio {ratio:.5} > 0.01")));
    }
    Ok(format!("CLS-row max abs diff {worst:.3e}; QK/AV cost ratio {ratio:.5}"))
}

// ---------------------------------------------------------------------------
// Factorization masks
// ---------------------------------------------------------------------------

pub fn check_factorization_masks() -> Result<String> {
    let cfg = ModelConfig {
        input_size: 32,
        frames: 4,
        embed_dim: 16,
        heads: 2,
        max_frames: 8,
        ..ModelConfig::default()
    };
    let geom = TokenGeom { t: cfg.frames, n: cfg.token_grid() };
    let (t, nn, d) = (geom.t, geom.n * geom.n, cfg.embed_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let z = Tensor::<f64>::randn(&[1, geom.seq_len(), d], 1.0, &mut rng);
    let spatial = Branch::<f64>::init("sp", BranchKind::Spatial, &cfg, &mut rng);
    let temporal = Branch::<f64>::init("tm", BranchKind::Temporal, &cfg, &mut rng);

    let mut checked = 0usize;
    for coord in 0..20usize {
        let frame = (coord * 7 + 1) % t;
        let pos = (coord * 5 + 2) % nn;
        let dim = (coord * 11 + 3) % d;
        let use_spatial = coord % 2 == 0;
        let branch = if use_spatial { &spatial } else { &temporal };

        let mut tape = Tape::new();
        let mut fwd = Fwd::new(&mut tape, true);
        let zv = fwd.tape.leaf(&z, true);
        let (out, _, _) = branch.forward(&mut fwd, zv, geom, cfg.heads)?;
        let token_index = 1 + frame * nn + pos;
        let row = fwd.tape.slice(out, 1, token_index, 1)?;
        let c = fwd.tape.slice(row, 2, dim, 1)?;
        let loss = fwd.tape.sum_all(c)?;
        let grads = tape.backward(loss)?;
        let gz = grads.get(zv).ok_or_else(|| fail("no gradient".to_string()))?;
        for f in 0..t {
            for p in 0..nn {
                let idx = 1 + f * nn + p;
                let blocked = if use_spatial { f != frame } else { p != pos };
                if blocked {
                    let g = &gz.data()[idx * d..(idx + 1) * d];
                    if g.iter().any(|&v| v != 0.0) {
                        return Err(fail(format!(
                            "{} attention: coordinate {coord} leaks gradient to frame {f}, pos {p}",
                            if use_spatial { "spatial" } else { "temporal" }
                        )));
                    }
                }
            }
        }
        checked += 1;
    }
    Ok(format!("{checked} random output coordinates, all cross-group gradients exactly zero"))
}

// ---------------------------------------------------------------------------
// Attention/normalization invariants
// ---------------------------------------------------------------------------

pub fn check_attention_invariants() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    // Row-stochastic attention and mixing weights in every fusion mode.
    for mode in [FusionMode::Ca, FusionMode::Swa, FusionMode::None] {
        let cfg = ModelConfig {
            input_size: 32,
            frames: 4,
            embed_dim: 16,
            heads: 2,
            max_frames: 8,
            fusion: mode,
            ..ModelConfig::default()
        };
        let geom = TokenGeom { t: cfg.frames, n: cfg.token_grid() };
        let block = AmdfBlock::<f64>::init("blk", &cfg, &mut rng);
        let z = Tensor::randn(&[2, geom.seq_len(), cfg.embed_dim], 1.0, &mut rng);
        let mut tape = Tape::new();
        let mut fwd = Fwd::new(&mut tape, false);
        let zv = fwd.tape.constant(&z);
        let (out, trace) = block.forward(&mut fwd, zv)?;
        if tape.shape(out) != tape.shape(zv) {
            return Err(fail(format!("{mode}: block changed the sequence shape")));
        }
        let mut maps = vec![
            trace.spatial_patch_probs,
            trace.spatial_cls_probs,
            trace.temporal_patch_probs,
            trace.temporal_cls_probs,
        ];
        maps.extend(trace.fusion_probs.iter().copied());
        for m in maps {
            let v = tape.value(m);
            let last = *v.shape().last().unwrap();
            for row in v.data().chunks(last) {
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > 1e-6 {
                    return Err(fail(format!("{mode}: attention row sums to {sum}")));
                }
            }
        }
        let w = tape.value(trace.mix_weights);
        if !(w.data().iter().all(|&x| x > 0.0)) || (w.data().iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(fail(format!("{mode}: mixing weights {:?} invalid", w.data())));
        }
        if w.data()[0] != 0.5 || w.data()[1] != 0.5 {
            return Err(fail(format!("{mode}: equal logits must mix exactly 0.5/0.5, got {:?}", w.data())));
        }
    }

    // Temporal length preservation across random configs, and the block
    // count contract.
    for (blocks, frames, tk) in [(1usize, 4usize, 3usize), (2, 2, 1), (1, 6, 3)] {
        let cfg = ModelConfig {
            conv_blocks: blocks,
            frames,
            temporal_kernel: tk,
            input_size: 32,
            embed_dim: 8,
            heads: 2,
            max_frames: 8,
            channels: [4, 4, 8, 8, 8],
            ..ModelConfig::default()
        };
        let model = Model::<f32>::new(&cfg, 5)?;
        if model.num_amdf_blocks() != model.num_conv_blocks() + 1 {
            return Err(fail(format!(
                "block contract violated: {} AMDF vs {} conv",
                model.num_amdf_blocks(),
                model.num_conv_blocks()
            )));
        }
        let clip = Tensor::randn(&[1, 1, frames, 32, 32], 1.0, &mut rng);
        let mut tape = Tape::inference();
        let mut fwd = Fwd::new(&mut tape, false);
        let c = fwd.tape.constant(&clip);
        let outs = model.encoder_forward(&mut fwd, c)?;
        for (i, o) in outs.iter().enumerate() {
            if tape.shape(*o)[2] != frames {
                return Err(fail(format!(
                    "stage c{} changed temporal length to {}",
                    i + 1,
                    tape.shape(*o)[2]
                )));
            }
        }
    }
    Ok("row sums, mixing weights, temporal lengths, block contract all hold".to_string())
}

// ---------------------------------------------------------------------------
// Checkpoint container
// ---------------------------------------------------------------------------

pub fn check_checkpoint_roundtrip() -> Result<String> {
    let cfg8 = ModelConfig { input_size: 32, frames: 8, embed_dim: 16, heads: 2, max_frames: 16, ..ModelConfig::default() };
    let model = Model::<f32>::new(&cfg8, 3)?;
    let ckpt = model.to_checkpoint();
    let bytes = ckpt.to_bytes();
    let back = Checkpoint::from_bytes(&bytes)?;
    if back.to_bytes() != bytes {
        return Err(fail("serialized bytes changed across a round-trip".to_string()));
    }
    let mut names = 0usize;
    for (name, t) in ckpt.iter() {
        let r = back.get(name).ok_or_else(|| fail(format!("{name} lost in round-trip")))?;
        if r.shape() != t.shape() {
            return Err(fail(format!("{name}: shape changed")));
        }
        for (a, b) in t.data().iter().zip(r.data()) {
            if a.to_bits() != b.to_bits() {
                return Err(fail(format!("{name}: payload bits changed")));
            }
        }
        names += 1;
    }

    // 8-frame checkpoint into a 16-frame model.
    let cfg16 = ModelConfig { frames: 16, ..cfg8 };
    let mut model16 = Model::<f32>::new(&cfg16, 4)?;
    model16.load_from_checkpoint(&ckpt)?;
    Ok(format!("{names} tensors bitwise-stable; 8-frame checkpoint loads into a 16-frame model"))
}

// ---------------------------------------------------------------------------
// Metrics oracle and model finiteness
// ---------------------------------------------------------------------------

pub fn check_metrics_oracle() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 1000;
    let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let m = evaluate_metrics(&preds, &labels)?;

    let mut cells = [[0usize; 2]; 2];
    for (&p, &y) in preds.iter().zip(&labels) {
        cells[p][y] += 1;
    }
    let acc = (cells[0][0] + cells[1][1]) as f64 / n as f64;
    let pc = |c: usize| -> (f64, f64, f64) {
        let tp = cells[c][c] as f64;
        let fp = cells[c][1 - c] as f64;
        let fneg = cells[1 - c][c] as f64;
        let p = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
        let r = if tp + fneg == 0.0 { 0.0 } else { tp / (tp + fneg) };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        (p, r, f)
    };
    let (p0, r0, f0) = pc(0);
    let (p1, r1, f1) = pc(1);
    if m.accuracy != acc
        || m.precision != 0.5 * (p0 + p1)
        || m.recall != 0.5 * (r0 + r1)
        || m.f1 != 0.5 * (f0 + f1)
    {
        return Err(fail("metrics disagree with the brute-force confusion matrix".to_string()));
    }
    Ok("exact match with brute-force confusion matrix on 1000 pairs".to_string())
}

pub fn check_model_finiteness() -> Result<String> {
    let cfg = ModelConfig {
        input_size: 32,
        frames: 2,
        embed_dim: 8,
        heads: 2,
        max_frames: 4,
        channels: [4, 4, 8, 8, 8],
        ..ModelConfig::default()
    };
    for seed in 0..100u64 {
        let model = Model::<f32>::new(&cfg, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 10_000);
        let clip = Tensor::randn(&[1, 1, 2, 32, 32], 1.0, &mut rng);
        let mut tape = Tape::inference();
        let mut fwd = Fwd::new(&mut tape, false);
        let c = fwd.tape.constant(&clip);
        let (out, _) = model.forward(&mut fwd, c, None)?;
        if !tape.value(out.logits).is_finite() || !tape.value(out.probs).is_finite() {
            return Err(fail(format!("seed {seed}: non-finite forward output")));
        }
    }
    Ok("100 random inits on random clips, all outputs finite".to_string())
}

// ---------------------------------------------------------------------------
// Training checks (slow): end-to-end synthetic task and ablation directions
// ---------------------------------------------------------------------------

/// Train the default toy model (fusion=CA, 8 frames, 64x64) on 1000
/// synthetic clips and require >= 90% test accuracy within 20 epochs; the
/// metric computation is cross-checked against the confusion counts.
pub fn check_e2e_synthetic() -> Result<String> {
    use crate::config::{InitMode, RunConfig};
    use crate::data::generate_synthetic_dataset;
    use crate::train::{evaluate, test_split, train_with_stop};

    let data = generate_synthetic_dataset(1000, 8, 64, 64, 2024)?;
    let run = RunConfig {
        model: ModelConfig { fusion: FusionMode::Ca, ..ModelConfig::default() },
        lr: 1e-3,
        weight_decay: 1e-4,
        epochs: 20,
        batch_size: 4,
        seed: 11,
        init: InitMode::Scratch,
    };
    let out = train_with_stop(&run, &data, |r| r.val_acc >= 0.99)?;
    let mut best = Model::<f32>::new(&run.model, 0)?;
    best.load_from_checkpoint(&out.best_checkpoint)?;
    let test = test_split(&run, &data);
    let (_, metrics, predictions) = evaluate(&best, &test, 8)?;

    // Metric cross-check against raw confusion counts on the live test
    // predictions.
    let labels: Vec<usize> = test.iter().map(|c| c.label).collect();
    let mut cells = [[0usize; 2]; 2];
    for (&p, &y) in predictions.iter().zip(&labels) {
        cells[p][y] += 1;
    }
    let acc = (cells[0][0] + cells[1][1]) as f64 / labels.len() as f64;
    if metrics.accuracy != acc {
        return Err(fail(format!(
            "metric mismatch: evaluate_metrics {:.6} vs confusion oracle {:.6}",
            metrics.accuracy, acc
        )));
    }
    if metrics.accuracy < 0.90 {
        return Err(fail(format!(
            "test accuracy {:.4} < 0.90 after {} epochs",
            metrics.accuracy,
            out.log.len()
        )));
    }
    Ok(format!(
        "test accuracy {:.4} (f1 {:.4}) after {} epochs on 1000 clips",
        metrics.accuracy,
        metrics.f1,
        out.log.len()
    ))
}

/// Warm-start direction: over 3 seeds, the inflated-init runs must reach at
/// least the scratch runs' mean validation accuracy at epoch 5.
pub fn check_ablation_init() -> Result<String> {
    use crate::config::{InitMode, RunConfig};
    use crate::data::generate_synthetic_dataset;
    use crate::train::train;

    let data = generate_synthetic_dataset(200, 8, 64, 64, 77)?;
    let mut means = [0.0f64; 2];
    let mut details = Vec::new();
    for (slot, init) in [InitMode::Scratch, InitMode::Inflated].into_iter().enumerate() {
        let mut accs = Vec::new();
        for seed in [1u64, 2, 3] {
            let run = RunConfig {
                model: ModelConfig { fusion: FusionMode::Ca, ..ModelConfig::default() },
                lr: 1e-4,
                weight_decay: 1e-4,
                epochs: 5,
                batch_size: 4,
                seed,
                init,
            };
            let out = train(&run, &data)?;
            let at5 = out.log.last().ok_or_else(|| fail("empty log".to_string()))?.val_acc;
            accs.push(at5);
        }
        means[slot] = accs.iter().sum::<f64>() / accs.len() as f64;
        details.push(format!("{init}: epoch-5 val accs {accs:?}"));
    }
    if means[1] < means[0] {
        return Err(fail(format!(
            "inflated mean {:.4} < scratch mean {:.4} at epoch 5 ({})",
            means[1],
            means[0],
            details.join("; ")
        )));
    }
    Ok(format!(
        "epoch-5 val accuracy mean: inflated {:.4} >= scratch {:.4}",
        means[1], means[0]
    ))
}

/// Fusion direction: over 3 seeds, CA and SWA each reach at least the
/// no-fusion final accuracy minus 2 points. No CA-vs-SWA ordering is
/// asserted.
pub fn check_ablation_fusion() -> Result<String> {
    use crate::config::{InitMode, RunConfig};
    use crate::data::generate_synthetic_dataset;
    use crate::train::{evaluate, test_split, train};

    let data = generate_synthetic_dataset(200, 8, 64, 64, 99)?;
    let mean_of = |mode: FusionMode| -> Result<f64> {
        let mut accs = Vec::new();
        for seed in [1u64, 2, 3] {
            let run = RunConfig {
                model: ModelConfig { fusion: mode, ..ModelConfig::default() },
                lr: 1e-3,
                weight_decay: 1e-4,
                epochs: 4,
                batch_size: 4,
                seed,
                init: InitMode::Scratch,
            };
            let out = train(&run, &data)?;
            let mut best = Model::<f32>::new(&run.model, 0)?;
            best.load_from_checkpoint(&out.best_checkpoint)?;
            let test = test_split(&run, &data);
            let (_, m, _) = evaluate(&best, &test, 8)?;
            accs.push(m.accuracy);
        }
        Ok(accs.iter().sum::<f64>() / accs.len() as f64)
    };
    let ca = mean_of(FusionMode::Ca)?;
    let swa = mean_of(FusionMode::Swa)?;
    let none = mean_of(FusionMode::None)?;
    if ca < none - 0.02 {
        return Err(fail(format!("CA mean {ca:.4} < no-fusion mean {none:.4} - 0.02")));
    }
    if swa < none - 0.02 {
        return Err(fail(format!("SWA mean {swa:.4} < no-fusion mean {none:.4} - 0.02")));
    }
    Ok(format!(
        "final test accuracy means: ca {ca:.4}, swa {swa:.4}, none {none:.4} (tolerance 0.02)"
    ))
}

/// The fast (non-training) verification suite.
pub fn run_fast_checks() -> Vec<CheckResult> {
    vec![
        run_check("gradients.primitives", check_primitive_gradients),
        run_check("gradients.full_tiny_model", check_full_model_gradients),
        run_check("inflation.boring_video", check_boring_video),
        run_check("fusion.ca_equivalence_and_cost", check_ca_equivalence),
        run_check("attention.factorization_masks", check_factorization_masks),
        run_check("attention.invariants", check_attention_invariants),
        run_check("checkpoint.roundtrip", check_checkpoint_roundtrip),
        run_check("metrics.confusion_oracle", check_metrics_oracle),
        run_check("model.finite_forward", check_model_finiteness),
    ]
}

/// The training-based verification suite (minutes, not seconds).
pub fn run_training_checks() -> Vec<CheckResult> {
    vec![
        run_check("train.e2e_synthetic", check_e2e_synthetic),
        run_check("train.ablation_init", check_ablation_init),
        run_check("train.ablation_fusion", check_ablation_fusion),
    ]
}

pub fn render_table(results: &[CheckResult]) -> String {
    let mut s = String::new();
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(10).max(10);
    for r in results {
        s.push_str(&format!(
            "{:<width$}  {}  {:>7.2}s  {}\n",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.seconds,
            r.details,
        ));
    }
    s
}
