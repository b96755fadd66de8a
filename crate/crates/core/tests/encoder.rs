//! Conv-encoder contracts: stem shapes, temporal length invariance, residual
//! degenerate cases, frame-permutation equivariance, replay oracle.

use csg3dct::config::ModelConfig;
use csg3dct::model::encoder::{ConvBlock, Stem};
use csg3dct::model::{Fwd, Model, ParamKind, Params};
use csg3dct::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn toy_config() -> ModelConfig {
    ModelConfig::default()
}

#[test]
fn stem_shape_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let stem = Stem::<f32>::init("stem", 16, &mut rng);
    let clip = Tensor::randn(&[2, 1, 8, 64, 64], 1.0, &mut rng);
    let mut tape = Tape::new();
    let mut fwd = Fwd::new(&mut tape, false);
    let c = fwd.tape.constant(&clip);
    let y = stem.forward(&mut fwd, c).unwrap();
    assert_eq!(tape.shape(y), &[2, 16, 8, 16, 16]);
}

#[test]
fn stem_handles_single_frame_clips() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let stem = Stem::<f32>::init("stem", 8, &mut rng);
    let clip = Tensor::randn(&[1, 1, 1, 32, 32], 1.0, &mut rng);
    let mut tape = Tape::new();
    let mut fwd = Fwd::new(&mut tape, false);
    let c = fwd.tape.constant(&clip);
    let y = stem.forward(&mut fwd, c).unwrap();
    assert_eq!(tape.shape(y), &[1, 8, 1, 8, 8]);
}

#[test]
fn stem_zero_input_stays_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let stem = Stem::<f32>::init("stem", 8, &mut rng);
    let clip = Tensor::zeros(&[1, 1, 2, 16, 16]);
    let mut tape = Tape::new();
    let mut fwd = Fwd::new(&mut tape, false);
    let c = fwd.tape.constant(&clip);
    let y = stem.forward(&mut fwd, c).unwrap();
    assert!(tape.value(y).is_finite());
}

#[test]
fn zeroed_residual_path_with_identity_shortcut_is_relu() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // Same in/out channels and stride 1: identity shortcut, no projection.
    let mut block = ConvBlock::<f32>::init("b", 8, 8, 3, 1, &mut rng);
    assert!(block.shortcut.is_none());
    block.visit_mut(&mut |_, kind, t| {
        if kind == ParamKind::Trainable {
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
    });
    let x = Tensor::randn(&[1, 8, 4, 5, 5], 1.0, &mut rng);
    let mut tape = Tape::new();
    let mut fwd = Fwd::new(&mut tape, false);
    let xv = fwd.tape.constant(&x);
    let y = block.forward(&mut fwd, xv).unwrap();
    let want = x.map(|v| v.max(0.0));
    assert_eq!(tape.value(y).data(), want.data());
}

#[test]
fn temporal_kernel_3_preserves_temporal_length() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let block = ConvBlock::<f32>::init("b", 8, 16, 3, 2, &mut rng);
    let x = Tensor::randn(&[1, 8, 8, 8, 8], 1.0, &mut rng);
    let mut tape = Tape::new();
    let mut fwd = Fwd::new(&mut tape, false);
    let xv = fwd.tape.constant(&x);
    let y = block.forward(&mut fwd, xv).unwrap();
    assert_eq!(tape.shape(y), &[1, 16, 8, 4, 4]);
}

#[test]
fn conv_block_matches_primitive_replay_oracle() {
    // Recompute the block step by step with raw tape ops on the same weights.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let block = ConvBlock::<f32>::init("b", 4, 8, 3, 2, &mut rng);
    let x = Tensor::randn(&[2, 4, 4, 6, 6], 1.0, &mut rng);

    let mut tape = Tape::new();
    let mut fwd = Fwd::new(&mut tape, false);
    let xv = fwd.tape.constant(&x);
    let got = block.forward(&mut fwd, xv).unwrap();
    let got = tape.value(got).clone();

    let mut t2 = Tape::<f32>::new();
    let xv = t2.constant(&x);
    let bn = |t2: &mut Tape<f32>, x, bn_layer: &csg3dct::model::BatchNormLayer<f32>| {
        let g = t2.constant(&bn_layer.gamma);
        let b = t2.constant(&bn_layer.beta);
        let (y, _) = t2
            .batch_norm(x, g, b, &bn_layer.running_mean, &bn_layer.running_var, false, bn_layer.eps)
            .unwrap();
        y
    };
    let w1 = t2.constant(&block.conv1.weight);
    let r = t2.conv3d(xv, w1, (1, 1, 1), (0, 0, 0)).unwrap();
    let r = bn(&mut t2, r, &block.bn1);
    let r = t2.relu(r).unwrap();
    let w2 = t2.constant(&block.conv2.weight);
    let r = t2.conv3d(r, w2, (1, 2, 2), (1, 1, 1)).unwrap();
    let r = bn(&mut t2, r, &block.bn2);
    let r = t2.relu(r).unwrap();
    let w3 = t2.constant(&block.conv3.weight);
    let r = t2.conv3d(r, w3, (1, 1, 1), (0, 0, 0)).unwrap();
    let r = bn(&mut t2, r, &block.bn3);
    let (sc, sbn) = block.shortcut.as_ref().unwrap();
    let ws = t2.constant(&sc.weight);
    let s = t2.conv3d(xv, ws, (1, 2, 2), (0, 0, 0)).unwrap();
    let s = bn(&mut t2, s, sbn);
    let sum = t2.add(s, r).unwrap();
    let want = t2.relu(sum).unwrap();

    assert!(got.max_abs_diff(t2.value(want)) == 0.0);
}

#[test]
fn encoder_stage_shapes_and_temporal_invariance() {
    let cfg = toy_config();
    let model = Model::<f32>::new(&cfg, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let clip = Tensor::randn(&[1, 1, 8, 64, 64], 1.0, &mut rng);
    let mut tape = Tape::inference();
    let mut fwd = Fwd::new(&mut tape, false);
    let c = fwd.tape.constant(&clip);
    let outs = model.encoder_forward(&mut fwd, c).unwrap();
    assert_eq!(outs.len(), 5);
    let expected = [
        [1usize, 16, 8, 16, 16],
        [1, 32, 8, 16, 16],
        [1, 64, 8, 8, 8],
        [1, 128, 8, 4, 4],
        [1, 256, 8, 2, 2],
    ];
    for (o, want) in outs.iter().zip(expected.iter()) {
        assert_eq!(tape.shape(*o), want);
        assert_eq!(tape.shape(*o)[2], 8, "temporal length must be preserved at every stage");
    }
}

fn permute_frames(clip: &Tensor<f32>, perm: &[usize]) -> Tensor<f32> {
    let s = clip.shape().to_vec();
    let (n, c, t, h, w) = (s[0], s[1], s[2], s[3], s[4]);
    let mut out = Tensor::zeros(&s);
    for b in 0..n {
        for ch in 0..c {
            for (dst_t, &src_t) in perm.iter().enumerate() {
                let src = ((b * c + ch) * t + src_t) * h * w;
                let dst = ((b * c + ch) * t + dst_t) * h * w;
                let data = clip.data()[src..src + h * w].to_vec();
                out.data_mut()[dst..dst + h * w].copy_from_slice(&data);
            }
        }
    }
    out
}

#[test]
fn frame_permutation_equivariance_holds_iff_temporal_kernels_are_1() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let clip = Tensor::randn(&[1, 1, 4, 32, 32], 1.0, &mut rng);
    let perm = [2usize, 0, 3, 1];
    let permuted = permute_frames(&clip, &perm);

    let small = ModelConfig { input_size: 32, frames: 4, ..toy_config() };
    let run_encoder = |cfg: &ModelConfig, input: &Tensor<f32>| -> Vec<Tensor<f32>> {
        let model = Model::<f32>::new(cfg, 9).unwrap();
        let mut tape = Tape::inference();
        let mut fwd = Fwd::new(&mut tape, false);
        let c = fwd.tape.constant(input);
        let outs = model.encoder_forward(&mut fwd, c).unwrap();
        outs.iter().map(|&o| tape.value(o).clone()).collect()
    };

    // All temporal kernels 1: per-frame processing, outputs permute along.
    let flat_cfg = ModelConfig { temporal_kernel: 1, ..small.clone() };
    let base = run_encoder(&flat_cfg, &clip);
    let perm_out = run_encoder(&flat_cfg, &permuted);
    for (b, p) in base.iter().zip(perm_out.iter()) {
        let expected = permute_frames(b, &perm);
        assert_eq!(p.data(), expected.data(), "per-frame encoder must be frame-equivariant");
    }

    // Temporal kernel 3 in c3..c5: time actually mixes, equivariance breaks.
    let mixed = run_encoder(&small, &clip);
    let mixed_perm = run_encoder(&small, &permuted);
    let mut max_violation = 0.0f64;
    for (b, p) in mixed.iter().zip(mixed_perm.iter()) {
        let expected = permute_frames(b, &perm);
        max_violation = max_violation.max(p.max_abs_diff(&expected));
    }
    assert!(
        max_violation > 1e-3,
        "temporal convolution should break frame-permutation equivariance, got {max_violation}"
    );
}

#[test]
fn param_count_of_flat_model_matches_per_frame_reference() {
    let cfg = ModelConfig { temporal_kernel: 1, ..toy_config() };
    let three_d = Model::<f32>::new(&cfg, 1).unwrap();
    let two_d = Model::<f32>::new(&cfg.per_frame(), 1).unwrap();
    assert_eq!(three_d.param_count(), two_d.param_count());
}

#[test]
fn indivisible_input_size_is_rejected_at_construction() {
    let cfg = ModelConfig { input_size: 50, ..toy_config() };
    assert!(Model::<f32>::new(&cfg, 0).is_err());
}
