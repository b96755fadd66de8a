//! Feature-coupling-unit and classifier-head contracts.

use csg3dct::config::ModelConfig;
use csg3dct::model::fcu::{Fcu, Heads};
use csg3dct::model::{Fwd, Model};
use csg3dct::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cfg_with(embed: usize) -> ModelConfig {
    ModelConfig { embed_dim: embed, heads: 2, ..ModelConfig::default() }
}

#[test]
fn fcu_down_on_zero_features_is_identity_when_norm_is_zeroed() {
    // The additive-identity property: a zero feature map contributes nothing.
    // LayerNorm of the zero projection is beta (= 0 at init), so the tokens
    // come back bit-identical.
    let cfg = cfg_with(16);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let fcu = Fcu::<f64>::init("fcu", 32, 16, &cfg, &mut rng).unwrap();
    let feat = Tensor::zeros(&[1, 32, 8, 16, 16]);
    let z = Tensor::randn(&[1, 129, 16], 1.0, &mut rng);
    let mut tape = Tape::new();
    let mut fwd = Fwd::new(&mut tape, false);
    let f = fwd.tape.constant(&feat);
    let zv = fwd.tape.constant(&z);
    let out = fcu.down(&mut fwd, f, zv).unwrap();
    // Zero conv output, so LN sees constant-zero rows: (0 - 0)/sqrt(eps)
    // * gamma + beta = 0. The addition leaves z unchanged.
    assert!(tape.value(out).max_abs_diff(&z) == 0.0);
}

#[test]
fn fcu_down_constant_frame_shifts_all_its_tokens_equally() {
    let cfg = cfg_with(16);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let fcu = Fcu::<f64>::init("fcu", 8, 16, &cfg, &mut rng).unwrap();
    // Feature constant within each frame (different constants per frame).
    let mut feat = Tensor::zeros(&[1, 8, 8, 16, 16]);
    for ch in 0..8 {
        for t in 0..8 {
            let base = (ch * 8 + t) * 256;
            let val = 0.1 * ch as f64 - 0.2 * t as f64;
            for i in 0..256 {
                feat.data_mut()[base + i] = val;
            }
        }
    }
    let z = Tensor::zeros(&[1, 129, 16]);
    let mut tape = Tape::new();
    let mut fwd = Fwd::new(&mut tape, false);
    let f = fwd.tape.constant(&feat);
    let zv = fwd.tape.constant(&z);
    let out = fcu.down(&mut fwd, f, zv).unwrap();
    let o = tape.value(out);
    let d = 16;
    // Within each frame, all 16 patch tokens got the same shift vector.
    for frame in 0..8 {
        let first = &o.data()[(1 + frame * 16) * d..(1 + frame * 16 + 1) * d];
        for p in 1..16 {
            let tok = &o.data()[(1 + frame * 16 + p) * d..(1 + frame * 16 + p + 1) * d];
            for j in 0..d {
                assert!((tok[j] - first[j]).abs() < 1e-12);
            }
        }
    }
    // CLS untouched.
    assert!(o.data()[..d].iter().all(|&v| v == 0.0));
}

#[test]
fn fcu_down_matches_pool_then_project_oracle() {
    // The unit projects then pools; pooling and a 1x1x1 conv commute, so an
    // independent pool-then-project computation must agree.
    let cfg = cfg_with(8);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let channels = 4;
    let grid = 16;
    let fcu = Fcu::<f64>::init("fcu", channels, grid, &cfg, &mut rng).unwrap();
    let feat = Tensor::randn(&[1, channels, 8, grid, grid], 1.0, &mut rng);
    let z = Tensor::zeros(&[1, 129, 8]);

    let mut tape = Tape::new();
    let mut fwd = Fwd::new(&mut tape, false);
    let f = fwd.tape.constant(&feat);
    let zv = fwd.tape.constant(&z);
    let out = fcu.down(&mut fwd, f, zv).unwrap();
    let got = tape.value(out).clone();

    // Oracle: average-pool 4x4 windows first, then apply the 1x1x1 conv as a
    // plain matrix, then layer norm, with nested loops throughout.
    let n = 4;
    let d = 8;
    let pool_f = grid / n;
    let mut want = vec![0.0f64; 129 * d];
    for t in 0..8 {
        for gy in 0..n {
            for gx in 0..n {
                let mut pooled = vec![0.0f64; channels];
                for (c, p) in pooled.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for yy in 0..pool_f {
                        for xx in 0..pool_f {
                            let y = gy * pool_f + yy;
                            let x = gx * pool_f + xx;
                            acc += feat.data()[((c * 8 + t) * grid + y) * grid + x];
                        }
                    }
                    *p = acc / (pool_f * pool_f) as f64;
                }
                let mut proj = vec![0.0f64; d];
                for (o, pr) in proj.iter_mut().enumerate() {
                    *pr = (0..channels)
                        .map(|c| fcu.down_conv.weight.data()[o * channels + c] * pooled[c])
                        .sum();
                }
                let mean = proj.iter().sum::<f64>() / d as f64;
                let var = proj.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
                let token = 1 + t * n * n + gy * n + gx;
                for j in 0..d {
                    let ln = (proj[j] - mean) / (var + fcu.down_ln.eps).sqrt()
                        * fcu.down_ln.gamma.data()[j]
                        + fcu.down_ln.beta.data()[j];
                    want[token * d + j] = ln;
                }
            }
        }
    }
    for i in 0..129 * d {
        assert!(
            (got.data()[i] - want[i]).abs() < 1e-6,
            "index {i}: {} vs {}",
            got.data()[i],
            want[i]
        );
    }
}

#[test]
fn fcu_up_on_zero_tokens_keeps_features_if_bn_beta_zero() {
    let cfg = cfg_with(16);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let fcu = Fcu::<f64>::init("fcu", 8, 16, &cfg, &mut rng).unwrap();
    let feat = Tensor::randn(&[1, 8, 8, 16, 16], 1.0, &mut rng);
    let z = Tensor::zeros(&[1, 129, 16]);
    let mut tape = Tape::new();
    let mut fwd = Fwd::new(&mut tape, false);
    let f = fwd.tape.constant(&feat);
    let zv = fwd.tape.constant(&z);
    // Eval mode: running stats are (0, 1), so BN(0) = beta = 0.
    let out = fcu.up(&mut fwd, zv, f).unwrap();
    assert!(tape.value(out).max_abs_diff(&feat) == 0.0);
}

#[test]
fn fcu_up_without_resampling_matches_matrix_oracle() {
    // Token grid n == stage grid: the up path is projection + BN + add.
    let cfg = ModelConfig { embed_dim: 8, heads: 2, input_size: 64, ..ModelConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = cfg.token_grid();
    assert_eq!(n, 4);
    let channels = 6;
    let fcu = Fcu::<f64>::init("fcu", channels, n, &cfg, &mut rng).unwrap();
    let feat = Tensor::randn(&[1, channels, 8, n, n], 1.0, &mut rng);
    let z = Tensor::randn(&[1, 129, 8], 1.0, &mut rng);

    let mut tape = Tape::new();
    let mut fwd = Fwd::new(&mut tape, false);
    let f = fwd.tape.constant(&feat);
    let zv = fwd.tape.constant(&z);
    let out = fcu.up(&mut fwd, zv, f).unwrap();
    let got = tape.value(out).clone();

    let d = 8;
    for t in 0..8 {
        for gy in 0..n {
            for gx in 0..n {
                let token = 1 + t * n * n + gy * n + gx;
                let tok = &z.data()[token * d..(token + 1) * d];
                for c in 0..channels {
                    let proj: f64 = (0..d)
                        .map(|j| fcu.up_conv.weight.data()[c * d + j] * tok[j])
                        .sum();
                    // Eval BN with stats (0,1): (proj - 0)/sqrt(1+eps)*gamma+beta.
                    let bn = proj / (1.0 + fcu.up_bn.eps).sqrt() * fcu.up_bn.gamma.data()[c]
                        + fcu.up_bn.beta.data()[c];
                    let idx = ((c * 8 + t) * n + gy) * n + gx;
                    let want = feat.data()[idx] + bn;
                    assert!((got.data()[idx] - want).abs() < 1e-9);
                }
            }
        }
    }
}

#[test]
fn fcu_shape_contract_with_upsampling() {
    // Tokens 129 x d onto a 16x16 stage: nearest upsample by 4.
    let cfg = cfg_with(32);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let fcu = Fcu::<f64>::init("fcu", 64, 16, &cfg, &mut rng).unwrap();
    let feat = Tensor::randn(&[1, 64, 8, 16, 16], 1.0, &mut rng);
    let z = Tensor::randn(&[1, 129, 32], 1.0, &mut rng);
    let mut tape = Tape::new();
    let mut fwd = Fwd::new(&mut tape, false);
    let f = fwd.tape.constant(&feat);
    let zv = fwd.tape.constant(&z);
    let out = fcu.up(&mut fwd, zv, f).unwrap();
    assert_eq!(tape.shape(out), &[1, 64, 8, 16, 16]);
}

#[test]
fn fcu_couples_below_token_grid_resolution() {
    // c5-like stage at 2x2 with a 4x4 token grid: down path upsamples 2 -> 4,
    // up path average-pools 4 -> 2.
    let cfg = cfg_with(16);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let fcu = Fcu::<f64>::init("fcu", 8, 2, &cfg, &mut rng).unwrap();
    let feat = Tensor::randn(&[1, 8, 8, 2, 2], 1.0, &mut rng);
    let z = Tensor::randn(&[1, 129, 16], 1.0, &mut rng);
    let mut tape = Tape::new();
    let mut fwd = Fwd::new(&mut tape, false);
    let f = fwd.tape.constant(&feat);
    let zv = fwd.tape.constant(&z);
    let down = fcu.down(&mut fwd, f, zv).unwrap();
    assert_eq!(fwd.tape.shape(down), &[1, 129, 16]);
    let up = fcu.up(&mut fwd, down, f).unwrap();
    assert_eq!(tape.shape(up), &[1, 8, 8, 2, 2]);
}

#[test]
fn classify_degenerate_heads() {
    let cfg = cfg_with(16);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut heads = Heads::<f64>::init("head", 32, &cfg, &mut rng);
    // Both heads zero-weight: logits [0,0], probs [0.5,0.5].
    for t in [&mut heads.conv_fc.weight, &mut heads.conv_fc.bias, &mut heads.token_fc.weight, &mut heads.token_fc.bias] {
        for v in t.data_mut() {
            *v = 0.0;
        }
    }
    let feat = Tensor::randn(&[2, 32, 8, 2, 2], 1.0, &mut rng);
    let z = Tensor::randn(&[2, 129, 16], 1.0, &mut rng);
    let mut tape = Tape::new();
    let mut fwd = Fwd::new(&mut tape, false);
    let f = fwd.tape.constant(&feat);
    let zv = fwd.tape.constant(&z);
    let (_, _, logits, probs) = heads.forward(&mut fwd, f, zv).unwrap();
    assert!(tape.value(logits).data().iter().all(|&v| v == 0.0));
    assert!(tape.value(probs).data().iter().all(|&p| p == 0.5));
}

#[test]
fn classify_with_zeroed_token_head_follows_conv_head() {
    let cfg = cfg_with(16);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut heads = Heads::<f64>::init("head", 32, &cfg, &mut rng);
    for t in [&mut heads.token_fc.weight, &mut heads.token_fc.bias] {
        for v in t.data_mut() {
            *v = 0.0;
        }
    }
    let feat = Tensor::randn(&[4, 32, 8, 2, 2], 1.0, &mut rng);
    let z = Tensor::randn(&[4, 129, 16], 1.0, &mut rng);
    let mut tape = Tape::new();
    let mut fwd = Fwd::new(&mut tape, false);
    let f = fwd.tape.constant(&feat);
    let zv = fwd.tape.constant(&z);
    let (conv_logits, _, logits, probs) = heads.forward(&mut fwd, f, zv).unwrap();
    let cl = tape.value(conv_logits);
    let l = tape.value(logits);
    for r in 0..4 {
        let argmax_conv = if cl.data()[r * 2] > cl.data()[r * 2 + 1] { 0 } else { 1 };
        let argmax_comb = if l.data()[r * 2] > l.data()[r * 2 + 1] { 0 } else { 1 };
        assert_eq!(argmax_conv, argmax_comb);
    }
    // Probabilities sum to 1.
    let p = tape.value(probs);
    for r in 0..4 {
        assert!((p.data()[r * 2] + p.data()[r * 2 + 1] - 1.0).abs() < 1e-6);
    }
}

#[test]
fn full_model_forward_is_finite_across_seeds() {
    // Quick slice of the larger 100-seed sweep that the verification suite
    // runs: random init, random clips, end-to-end forward must stay finite.
    let cfg = ModelConfig {
        input_size: 32,
        frames: 4,
        embed_dim: 16,
        heads: 2,
        max_frames: 8,
        channels: [8, 8, 16, 16, 16],
        ..ModelConfig::default()
    };
    for seed in 0..10u64 {
        let model = Model::<f32>::new(&cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let clip = Tensor::randn(&[2, 1, 4, 32, 32], 1.0, &mut rng);
        let mut tape = Tape::inference();
        let mut fwd = Fwd::new(&mut tape, false);
        let c = fwd.tape.constant(&clip);
        let (out, _) = model.forward(&mut fwd, c, None).unwrap();
        assert!(tape.value(out.logits).is_finite());
        assert!(tape.value(out.probs).is_finite());
        assert_eq!(tape.value(out.probs).shape(), &[2, 2]);
    }
}

#[test]
fn amdf_block_count_is_conv_block_count_plus_one() {
    for blocks in [1usize, 2] {
        let cfg = ModelConfig {
            conv_blocks: blocks,
            input_size: 32,
            frames: 2,
            embed_dim: 8,
            heads: 2,
            max_frames: 4,
            channels: [4, 4, 8, 8, 8],
            ..ModelConfig::default()
        };
        let model = Model::<f32>::new(&cfg, 0).unwrap();
        assert_eq!(model.num_conv_blocks(), 4 * blocks);
        assert_eq!(model.num_amdf_blocks(), model.num_conv_blocks() + 1);
    }
}
