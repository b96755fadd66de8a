//! Inflation contracts: the boring-video equivalence oracle, checkpoint
//! round-trips, and frame-count portability.

use csg3dct::checkpoint::Checkpoint;
use csg3dct::config::ModelConfig;
use csg3dct::inflate::inflate_checkpoint;
use csg3dct::model::{Fwd, Model, ParamKind, Params};
use csg3dct::plan::InflationPlan;
use csg3dct::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy() -> ModelConfig {
    ModelConfig::default()
}

/// Give batch-norm layers non-trivial running statistics and affine terms so
/// the equivalence test exercises real normalization, not identity maps.
fn randomize_bn<T: csg3dct::Element>(model: &mut Model<T>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    model.visit_mut(&mut |name, kind, t| {
        if kind == ParamKind::Stat {
            if name.ends_with("running_mean") {
                for v in t.data_mut() {
                    *v = T::of_f64(rng.random_range(-0.5..0.5));
                }
            } else {
                for v in t.data_mut() {
                    *v = T::of_f64(rng.random_range(0.5..2.0));
                }
            }
        } else if name.ends_with(".gamma") {
            for v in t.data_mut() {
                *v = T::of_f64(rng.random_range(0.5..1.5));
            }
        } else if name.ends_with(".beta") {
            for v in t.data_mut() {
                *v = T::of_f64(rng.random_range(-0.2..0.2));
            }
        }
    });
}

/// Run a few frame batches through the encoder in training mode so the
/// running statistics settle onto the data distribution, the way a real
/// pretrained source model's stats would.
fn calibrate_bn(model: &mut Model<f32>, frames: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..frames {
        let batch = Tensor::<f32>::randn(&[2, 1, 1, 64, 64], 1.0, &mut rng);
        let mut tape = Tape::inference();
        let mut fwd = Fwd::new(&mut tape, true);
        let c = fwd.tape.constant(&batch);
        model.encoder_forward(&mut fwd, c).unwrap();
        let updates = fwd.take_stat_updates();
        model.apply_stat_updates(updates).unwrap();
    }
}

#[test]
fn boring_video_equivalence_across_all_stages() {
    // 2D source: the per-frame restriction (every temporal kernel 1), with
    // running stats calibrated on data like a genuinely pretrained model.
    let cfg3d = toy();
    let cfg2d = cfg3d.per_frame();
    let mut model2d = Model::<f32>::new(&cfg2d, 42).unwrap();
    calibrate_bn(&mut model2d, 10, 7);
    let src = model2d.to_checkpoint();

    // 3D target, inflated from the 2D checkpoint.
    let mut model3d = Model::<f32>::new(&cfg3d, 43).unwrap();
    let plan = InflationPlan::for_specs(&model3d.conv_layer_specs());
    plan.validate_against(&model3d.conv_layer_specs()).unwrap();
    let (inflated, report) = inflate_checkpoint(&src, &plan, &model3d.to_checkpoint()).unwrap();
    model3d.load_from_checkpoint(&inflated).unwrap();
    // Only same-shape non-conv tensors may differ structurally between the
    // two architectures; everything must be copied or inflated here.
    assert!(
        report.randomized.is_empty(),
        "unexpected randomized tensors:\n{}",
        report.render()
    );

    // One random frame, repeated T times.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let frame = Tensor::<f32>::randn(&[1, 1, 1, 64, 64], 1.0, &mut rng);
    let t_frames = cfg3d.frames;
    let mut clip = Tensor::zeros(&[1, 1, t_frames, 64, 64]);
    for f in 0..t_frames {
        let dst = f * 64 * 64;
        clip.data_mut()[dst..dst + 64 * 64].copy_from_slice(frame.data());
    }

    let mut tape2 = Tape::inference();
    let mut fwd2 = Fwd::new(&mut tape2, false);
    let f2 = fwd2.tape.constant(&frame);
    let outs2d = model2d.encoder_forward(&mut fwd2, f2).unwrap();

    let mut tape3 = Tape::inference();
    let mut fwd3 = Fwd::new(&mut tape3, false);
    let c3 = fwd3.tape.constant(&clip);
    let outs3d = model3d.encoder_forward(&mut fwd3, c3).unwrap();

    // Temporal convs (one per stage in c3..c5) each poison one index at each
    // clip boundary; stages c1/c2 are exact everywhere.
    let poisoned = [0usize, 0, 1, 2, 3];
    for (stage, ((&o2, &o3), &pad)) in outs2d.iter().zip(&outs3d).zip(&poisoned).enumerate() {
        let v2 = tape2.value(o2);
        let v3 = tape3.value(o3);
        let s3 = v3.shape().to_vec();
        assert_eq!(s3[2], t_frames, "temporal length must be preserved");
        let (c, h, w) = (s3[1], s3[3], s3[4]);
        let plane = h * w;
        let mut max_diff = 0.0f64;
        for tt in pad..t_frames - pad {
            for ch in 0..c {
                let base3 = (ch * t_frames + tt) * plane;
                let base2 = ch * plane;
                for i in 0..plane {
                    let d = (v3.data()[base3 + i] as f64 - v2.data()[base2 + i] as f64).abs();
                    max_diff = max_diff.max(d);
                }
            }
        }
        assert!(
            max_diff < 1e-5,
            "stage c{}: max abs diff {max_diff} at temporally valid positions",
            stage + 1
        );
    }
}

#[test]
fn inflated_kernel_on_constant_clip_matches_2d_convolution() {
    // A 3-frame inflated kernel over identical frames (no temporal padding)
    // reproduces the 2D convolution of one frame at every valid temporal
    // position.
    use csg3dct::inflate::inflate_conv_kernel;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let k2d = Tensor::<f32>::randn(&[3, 2, 3, 3], 1.0, &mut rng);
    let k3d = inflate_conv_kernel(&k2d, 3).unwrap();

    let frame = Tensor::<f32>::randn(&[1, 2, 1, 8, 8], 1.0, &mut rng);
    let t = 5;
    let mut clip = Tensor::zeros(&[1, 2, t, 8, 8]);
    for c in 0..2 {
        for f in 0..t {
            let dst = (c * t + f) * 64;
            let src = c * 64;
            let data = frame.data()[src..src + 64].to_vec();
            clip.data_mut()[dst..dst + 64].copy_from_slice(&data);
        }
    }

    let mut tape = Tape::<f32>::new();
    let cv = tape.constant(&clip);
    let kv = tape.constant(&k3d);
    let y3 = tape.conv3d(cv, kv, (1, 1, 1), (0, 1, 1)).unwrap();

    // 2D reference: the same spatial kernel as a 1-frame conv.
    let k2d_5 = k2d.reshaped(&[3, 2, 1, 3, 3]).unwrap();
    let fv = tape.constant(&frame);
    let k2v = tape.constant(&k2d_5);
    let y2 = tape.conv3d(fv, k2v, (1, 1, 1), (0, 1, 1)).unwrap();

    let v3 = tape.value(y3);
    let v2 = tape.value(y2);
    let to = v3.shape()[2];
    assert_eq!(to, t - 2, "no temporal padding: T - kt + 1 positions");
    let plane = 8 * 8;
    for co in 0..3 {
        for tt in 0..to {
            for i in 0..plane {
                let a = v3.data()[(co * to + tt) * plane + i];
                let b = v2.data()[co * plane + i];
                assert!(
                    (a - b).abs() < 1e-5,
                    "channel {co}, time {tt}: {a} vs {b}"
                );
            }
        }
    }
}

#[test]
fn all_t1_plan_round_trips_conv_weights_byte_for_byte() {
    let cfg = toy().per_frame();
    let model_src = Model::<f32>::new(&cfg, 1).unwrap();
    let src = model_src.to_checkpoint();
    let mut model_dst = Model::<f32>::new(&cfg, 2).unwrap();
    let plan = InflationPlan::for_specs(&model_dst.conv_layer_specs());
    assert!(plan.entries.iter().all(|e| e.t == 1));
    let (out, _) = inflate_checkpoint(&src, &plan, &model_dst.to_checkpoint()).unwrap();
    model_dst.load_from_checkpoint(&out).unwrap();
    for spec in model_dst.conv_layer_specs() {
        let a = src.get(&spec.name).unwrap();
        let b = out.get(&spec.name).unwrap();
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(x.to_bits(), y.to_bits(), "{}", spec.name);
        }
    }
}

#[test]
fn model_checkpoint_roundtrip_is_bitwise() {
    let cfg = ModelConfig { input_size: 32, frames: 4, embed_dim: 16, heads: 2, max_frames: 8, ..toy() };
    let mut model = Model::<f32>::new(&cfg, 3).unwrap();
    randomize_bn(&mut model, 4);
    let ckpt = model.to_checkpoint();
    let bytes = ckpt.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();

    let mut other = Model::<f32>::new(&cfg, 99).unwrap();
    other.load_from_checkpoint(&back).unwrap();
    let mut diffs = 0usize;
    let reference = {
        let mut v: Vec<(String, Tensor<f32>)> = Vec::new();
        model.visit(&mut |n, _, t| v.push((n.to_string(), t.clone())));
        v
    };
    other.visit(&mut |n, _, t| {
        let (_, want) = reference.iter().find(|(rn, _)| rn == n).unwrap();
        for (a, b) in want.data().iter().zip(t.data()) {
            if a.to_bits() != b.to_bits() {
                diffs += 1;
            }
        }
    });
    assert_eq!(diffs, 0, "round-trip must be bitwise lossless");
}

#[test]
fn eight_frame_checkpoint_loads_into_sixteen_frame_model() {
    let cfg8 = ModelConfig { frames: 8, ..toy() };
    let cfg16 = ModelConfig { frames: 16, ..toy() };
    let model8 = Model::<f32>::new(&cfg8, 5).unwrap();
    let ckpt = model8.to_checkpoint();
    let mut model16 = Model::<f32>::new(&cfg16, 6).unwrap();
    // Parameters are frame-count independent, so this must succeed verbatim.
    model16.load_from_checkpoint(&ckpt).unwrap();
    let mut checked = 0usize;
    model16.visit(&mut |name, _, t| {
        let src = ckpt.get(name).unwrap();
        assert_eq!(src.shape(), t.shape(), "{name}");
        checked += 1;
    });
    assert!(checked > 0);
}

#[test]
fn mismatched_name_sets_produce_a_diff_listing() {
    let cfg = ModelConfig { input_size: 32, frames: 2, embed_dim: 8, heads: 2, max_frames: 4, ..toy() };
    let model = Model::<f32>::new(&cfg, 0).unwrap();
    let mut ckpt = model.to_checkpoint();
    // Tamper: drop one tensor by rebuilding without it, add a stranger.
    let mut tampered = Checkpoint::new();
    let skip = "head.conv_fc.bias";
    for (name, t) in ckpt.iter() {
        if name != skip {
            tampered.insert(name, t.clone()).unwrap();
        }
    }
    tampered.insert("stranger", Tensor::scalar(1.0)).unwrap();
    ckpt = tampered;

    let mut victim = Model::<f32>::new(&cfg, 1).unwrap();
    let err = victim.load_from_checkpoint(&ckpt).unwrap_err().to_string();
    assert!(err.contains(skip), "{err}");
    assert!(err.contains("stranger"), "{err}");
}

#[test]
fn plan_validation_against_model_catches_wrong_temporal_size() {
    let model = Model::<f32>::new(&toy(), 0).unwrap();
    let mut plan = InflationPlan::for_specs(&model.conv_layer_specs());
    // Claim t=1 for a kernel that actually has temporal extent 3.
    let victim = plan.entries.iter_mut().find(|e| e.t == 3).unwrap();
    victim.t = 1;
    assert!(plan.validate_against(&model.conv_layer_specs()).is_err());
}
