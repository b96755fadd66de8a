//! Synthetic stenosis-like clips: a bright vessel-wall annulus around a dark
//! lumen, an echogenic plaque disc occluding part of it, smooth per-frame
//! geometry tracks, and multiplicative speckle. The label derives exactly
//! from the geometry: severe iff the remnant-to-vessel area ratio dips below
//! 0.5 in any frame.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SEVERE_THRESHOLD: f64 = 0.5;
pub const LABEL_MILD: usize = 0;
pub const LABEL_SEVERE: usize = 1;

#[derive(Debug, Clone)]
pub struct ClipMeta {
    /// Lumen radius per frame, in pixels.
    pub radius_track: Vec<f64>,
    /// Remnant-area / vessel-area per frame (exact, from the disc geometry).
    pub ratio_track: Vec<f64>,
    pub noise_seed: u64,
}

#[derive(Debug, Clone)]
pub struct ClipSample {
    /// `[T, 1, H, W]`, grayscale in [0, 1].
    pub frames: Tensor<f32>,
    /// 0 = mild, 1 = severe.
    pub label: usize,
    pub meta: ClipMeta,
}

impl ClipSample {
    /// The labeling rule, straight from the geometry track.
    pub fn label_from_meta(meta: &ClipMeta) -> usize {
        let min = meta.ratio_track.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < SEVERE_THRESHOLD {
            LABEL_SEVERE
        } else {
            LABEL_MILD
        }
    }
}

fn clip_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&index.to_le_bytes());
    key[16..24].copy_from_slice(&0x5eed_c11b_u64.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Deterministically generate `count` clips; regeneration with the same
/// arguments is bitwise identical. Labels alternate, so the class balance is
/// exact up to one clip.
pub fn generate_synthetic_dataset(
    count: usize,
    t: usize,
    h: usize,
    w: usize,
    seed: u64,
) -> Result<Vec<ClipSample>> {
    if count == 0 || t == 0 || h < 16 || w < 16 {
        return Err(Error::arg(
            "generate_synthetic_dataset",
            format!("need count>0, frames>0 and size >= 16, got count={count}, t={t}, {h}x{w}"),
        ));
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let severe = i % 2 == 1;
        out.push(generate_clip(seed, i as u64, severe, t, h, w));
    }
    Ok(out)
}

fn generate_clip(seed: u64, index: u64, severe: bool, t: usize, h: usize, w: usize) -> ClipSample {
    let mut rng = clip_rng(seed, index);
    loop {
        let clip = try_generate_clip(&mut rng, severe, t, h, w);
        let min_ratio = clip.meta.ratio_track.iter().cloned().fold(f64::INFINITY, f64::min);
        // Degenerate geometry exactly at the threshold gets re-sampled.
        if (min_ratio - SEVERE_THRESHOLD).abs() > 1e-6 {
            return clip;
        }
    }
}

fn try_generate_clip(rng: &mut ChaCha8Rng, severe: bool, t: usize, h: usize, w: usize) -> ClipSample {
    let size = h.min(w) as f64;
    let cx = w as f64 * 0.5 + rng.random_range(-0.08..0.08) * w as f64;
    let cy = h as f64 * 0.5 + rng.random_range(-0.08..0.08) * h as f64;
    let r0 = rng.random_range(0.16..0.26) * size;
    let wall = 0.16 * r0 + 2.0;
    let pulse_amp = rng.random_range(0.02..0.07);
    let pulse_phase = rng.random_range(0.0..std::f64::consts::TAU);

    // Remnant-ratio track: smooth dip that reaches its minimum at one frame.
    // The sampled minima keep a margin around the 0.5 decision threshold so
    // labels are visually recoverable under speckle.
    let min_ratio: f64 = if severe {
        rng.random_range(0.12..0.42)
    } else {
        rng.random_range(0.58..0.92)
    };
    let amp = rng.random_range(0.05..(0.98 - min_ratio).min(0.30).max(0.051));
    let t_min = rng.random_range(0..t);
    let plaque_dir = rng.random_range(0.0..std::f64::consts::TAU);
    let plaque_off = rng.random_range(0.3..0.9);
    let noise_seed: u64 = rng.random();
    let sigma = 0.08;

    let mut radius_track = Vec::with_capacity(t);
    let mut ratio_track = Vec::with_capacity(t);
    for f in 0..t {
        let phase = std::f64::consts::TAU * f as f64 / t as f64;
        radius_track.push(r0 * (1.0 + pulse_amp * (phase + pulse_phase).sin()));
        let rel = std::f64::consts::TAU * (f as f64 - t_min as f64) / t as f64;
        ratio_track.push(min_ratio + amp * 0.5 * (1.0 - rel.cos()));
    }

    let mut noise = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut frames = vec![0.0f32; t * h * w];
    for f in 0..t {
        let r = radius_track[f];
        let ratio = ratio_track[f];
        // Plaque disc inside the lumen with the exact occluded-area fraction.
        let rp = r * (1.0 - ratio).sqrt();
        let off = (r - rp) * plaque_off;
        let px = cx + off * plaque_dir.cos();
        let py = cy + off * plaque_dir.sin();

        for y in 0..h {
            for x in 0..w {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                let dist = (dx * dx + dy * dy).sqrt();
                // Base tissue, vessel wall annulus, dark lumen.
                let mut v = 0.22;
                let in_wall = smoothstep(r - 1.0, r + 1.0, dist)
                    * (1.0 - smoothstep(r + wall - 1.0, r + wall + 1.0, dist));
                let in_lumen = 1.0 - smoothstep(r - 1.0, r + 1.0, dist);
                v = v * (1.0 - in_wall) + 0.85 * in_wall;
                v = v * (1.0 - in_lumen) + 0.08 * in_lumen;
                // Echogenic plaque occluding part of the lumen.
                let pdx = x as f64 - px;
                let pdy = y as f64 - py;
                let pdist = (pdx * pdx + pdy * pdy).sqrt();
                let in_plaque = (1.0 - smoothstep(rp - 1.0, rp + 1.0, pdist)) * in_lumen;
                v = v * (1.0 - in_plaque) + 0.55 * in_plaque;
                // Multiplicative speckle.
                let g: f64 = StandardNormal.sample(&mut noise);
                v *= 1.0 + sigma * g;
                frames[(f * h + y) * w + x] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }

    let meta = ClipMeta { radius_track, ratio_track, noise_seed };
    let label = ClipSample::label_from_meta(&meta);
    ClipSample {
        frames: Tensor::new(vec![t, 1, h, w], frames).expect("frame buffer matches shape"),
        label,
        meta,
    }
}

/// Per-frame samples (frame tensor `[1, 1, H, W]`, frame-level label) for
/// pretraining the single-frame model.
pub fn frame_dataset(clips: &[ClipSample]) -> Vec<(Tensor<f32>, usize)> {
    let mut out = Vec::new();
    for clip in clips {
        let s = clip.frames.shape().to_vec();
        let (t, h, w) = (s[0], s[2], s[3]);
        for f in 0..t {
            let start = f * h * w;
            let frame = Tensor::from_slice(&[1, 1, h, w], &clip.frames.data()[start..start + h * w])
                .expect("frame slice");
            let label = if clip.meta.ratio_track[f] < SEVERE_THRESHOLD {
                LABEL_SEVERE
            } else {
                LABEL_MILD
            };
            out.push((frame, label));
        }
    }
    out
}

/// Seed-stable disjoint 70/10/20 split by clip index.
pub fn split_indices(count: usize, seed: u64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..count).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x517e_de7e);
    for i in (1..idx.len()).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    let n_train = (count as f64 * 0.7).round() as usize;
    let n_val = (count as f64 * 0.1).round() as usize;
    let train = idx[..n_train].to_vec();
    let val = idx[n_train..(n_train + n_val).min(count)].to_vec();
    let test = idx[(n_train + n_val).min(count)..].to_vec();
    (train, val, test)
}

/// Stack clips (each `[T, 1, H, W]`) into a batch `[B, 1, T, H, W]`.
pub fn batch_clips(clips: &[&ClipSample]) -> Result<(Tensor<f32>, Vec<usize>)> {
    if clips.is_empty() {
        return Err(Error::arg("batch_clips", "empty batch".to_string()));
    }
    let s = clips[0].frames.shape().to_vec();
    let (t, h, w) = (s[0], s[2], s[3]);
    let mut data = Vec::with_capacity(clips.len() * t * h * w);
    let mut labels = Vec::with_capacity(clips.len());
    for c in clips {
        if c.frames.shape() != s.as_slice() {
            return Err(Error::shape(
                "batch_clips",
                format!("clip shapes disagree: {:?} vs {:?}", s, c.frames.shape()),
            ));
        }
        data.extend_from_slice(c.frames.data());
        labels.push(c.label);
    }
    // [T,1,H,W] per clip is the same flat layout as [1,T,H,W].
    Ok((Tensor::new(vec![clips.len(), 1, t, h, w], data)?, labels))
}

// ---------------------------------------------------------------------------
// Clip files: the checkpoint container with a "frames" tensor and a "label"
// scalar.
// ---------------------------------------------------------------------------

pub fn save_clip(path: &Path, clip: &ClipSample) -> Result<()> {
    let mut c = Checkpoint::new();
    c.insert("frames", clip.frames.clone())?;
    c.insert("label", Tensor::scalar(clip.label as f32))?;
    c.save(path)
}

/// Load a clip file: the frames tensor plus the stored label.
pub fn load_clip(path: &Path) -> Result<(Tensor<f32>, usize)> {
    let c = Checkpoint::load(path)?;
    let frames = c
        .get("frames")
        .ok_or_else(|| Error::Checkpoint(format!("{}: no `frames` tensor", path.display())))?
        .clone();
    if frames.shape().len() != 4 {
        return Err(Error::Checkpoint(format!(
            "{}: frames must be [T,1,H,W], got {:?}",
            path.display(),
            frames.shape()
        )));
    }
    let label = c
        .get("label")
        .ok_or_else(|| Error::Checkpoint(format!("{}: no `label` entry", path.display())))?
        .item() as usize;
    if label > 1 {
        return Err(Error::Checkpoint(format!("{}: label {label} out of range", path.display())));
    }
    Ok((frames, label))
}

/// Write a dataset as `clip_NNNNNN.clip` files under `dir`.
pub fn save_dataset(dir: &Path, clips: &[ClipSample]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, c) in clips.iter().enumerate() {
        save_clip(&dir.join(format!("clip_{i:06}.clip")), c)?;
    }
    Ok(())
}

/// Load every `*.clip` file under `dir` in name order. Metadata is not
/// stored in clip files, so the ratio track comes back empty; the label is
/// authoritative.
pub fn load_dataset(dir: &Path) -> Result<Vec<ClipSample>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "clip").unwrap_or(false))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::arg("load_dataset", format!("no .clip files under {}", dir.display())));
    }
    let mut out = Vec::with_capacity(paths.len());
    for p in &paths {
        let (frames, label) = load_clip(p)?;
        out.push(ClipSample {
            frames,
            label,
            meta: ClipMeta { radius_track: vec![], ratio_track: vec![], noise_seed: 0 },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_follow_the_min_ratio_rule() {
        let clips = generate_synthetic_dataset(40, 8, 32, 32, 1).unwrap();
        for c in &clips {
            assert_eq!(c.label, ClipSample::label_from_meta(&c.meta));
            let min = c.meta.ratio_track.iter().cloned().fold(f64::INFINITY, f64::min);
            if c.label == LABEL_SEVERE {
                assert!(min < SEVERE_THRESHOLD);
            } else {
                assert!(min >= SEVERE_THRESHOLD);
            }
        }
    }

    #[test]
    fn constant_high_ratio_is_mild_and_dipping_is_severe() {
        let meta_mild = ClipMeta { radius_track: vec![10.0; 4], ratio_track: vec![0.9; 4], noise_seed: 0 };
        assert_eq!(ClipSample::label_from_meta(&meta_mild), LABEL_MILD);
        let meta_severe = ClipMeta {
            radius_track: vec![10.0; 4],
            ratio_track: vec![0.9, 0.8, 0.3, 0.9],
            noise_seed: 0,
        };
        assert_eq!(ClipSample::label_from_meta(&meta_severe), LABEL_SEVERE);
    }

    #[test]
    fn generation_is_bitwise_deterministic() {
        let a = generate_synthetic_dataset(6, 4, 32, 32, 7).unwrap();
        let b = generate_synthetic_dataset(6, 4, 32, 32, 7).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.label, y.label);
            for (p, q) in x.frames.data().iter().zip(y.frames.data()) {
                assert_eq!(p.to_bits(), q.to_bits());
            }
        }
    }

    #[test]
    fn class_balance_is_within_45_55() {
        let clips = generate_synthetic_dataset(200, 4, 32, 32, 3).unwrap();
        let severe = clips.iter().filter(|c| c.label == LABEL_SEVERE).count();
        let frac = severe as f64 / clips.len() as f64;
        assert!((0.45..=0.55).contains(&frac), "severe fraction {frac}");
    }

    #[test]
    fn pixels_stay_in_unit_range() {
        let clips = generate_synthetic_dataset(4, 4, 32, 32, 5).unwrap();
        for c in &clips {
            assert!(c.frames.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn splits_are_disjoint_and_seed_stable() {
        let (tr, va, te) = split_indices(100, 9);
        assert_eq!(tr.len() + va.len() + te.len(), 100);
        let mut all: Vec<usize> = tr.iter().chain(&va).chain(&te).cloned().collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 100, "splits must be disjoint");
        let (tr2, va2, te2) = split_indices(100, 9);
        assert_eq!((tr, va, te), (tr2, va2, te2));
    }

    #[test]
    fn clip_files_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let clips = generate_synthetic_dataset(3, 4, 32, 32, 11).unwrap();
        save_dataset(dir.path(), &clips).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in clips.iter().zip(&back) {
            assert_eq!(a.label, b.label);
            for (p, q) in a.frames.data().iter().zip(b.frames.data()) {
                assert_eq!(p.to_bits(), q.to_bits());
            }
        }
    }

    #[test]
    fn frame_dataset_uses_per_frame_ratios() {
        let clips = generate_synthetic_dataset(10, 8, 32, 32, 13).unwrap();
        let frames = frame_dataset(&clips);
        assert_eq!(frames.len(), 80);
        let mut i = 0;
        for c in &clips {
            for f in 0..8 {
                let want = if c.meta.ratio_track[f] < SEVERE_THRESHOLD { 1 } else { 0 };
                assert_eq!(frames[i].1, want);
                i += 1;
            }
        }
    }
}
