//! End-to-end tests of the command-line surface: data generation, training,
//! evaluation, inference, inflation, verification.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_csg3dct"))
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn small_config(frames: usize, temporal_kernel: usize, epochs: usize) -> String {
    format!(
        "channels = 4,4,8,8,8\n\
         embed_dim = 8\n\
         heads = 2\n\
         patch = 4\n\
         temporal_kernel = {temporal_kernel}\n\
         fusion = ca\n\
         input_size = 32\n\
         frames = {frames}\n\
         max_frames = 8\n\
         lr = 1e-3\n\
         weight_decay = 1e-4\n\
         epochs = {epochs}\n\
         batch_size = 4\n\
         seed = 3\n\
         init = scratch\n"
    )
}

#[test]
fn gen_data_is_bitwise_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&bin()
            .args(["gen-data", "--count", "4", "--frames", "4", "--size", "32", "--seed", "9"])
            .arg("--out")
            .arg(out)
            .output()
            .unwrap());
    }
    for i in 0..4 {
        let name = format!("clip_{i:06}.clip");
        let x = std::fs::read(a.join(&name)).unwrap();
        let y = std::fs::read(b.join(&name)).unwrap();
        assert_eq!(x, y, "{name} differs between identical seeds");
    }
}

#[test]
fn train_eval_infer_cycle() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&bin()
        .args(["gen-data", "--count", "16", "--frames", "4", "--size", "32", "--seed", "5"])
        .arg("--out")
        .arg(&data)
        .output()
        .unwrap());

    let config = dir.path().join("run.cfg");
    std::fs::write(&config, small_config(4, 3, 1)).unwrap();
    let ckpt = dir.path().join("model.ckpt");
    let stdout = ok(&bin()
        .arg("train")
        .arg("--config")
        .arg(&config)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&ckpt)
        .output()
        .unwrap());
    assert!(stdout.contains("epoch=1"), "missing epoch log line: {stdout}");
    assert!(ckpt.exists());
    assert!(dir.path().join("model.log").exists(), "epoch log file should sit next to the checkpoint");
    let log = std::fs::read_to_string(dir.path().join("model.log")).unwrap();
    assert!(log.starts_with("epoch=1 train_loss="), "fixed field order expected: {log}");

    let stdout = ok(&bin()
        .arg("eval")
        .arg("--ckpt")
        .arg(&ckpt)
        .arg("--data")
        .arg(&data)
        .output()
        .unwrap());
    assert!(stdout.contains("accuracy="), "{stdout}");

    // Inference is deterministic and reports 4-decimal probabilities.
    let clip = data.join("clip_000000.clip");
    let run1 = ok(&bin().arg("infer").arg("--ckpt").arg(&ckpt).arg("--clip").arg(&clip).output().unwrap());
    let run2 = ok(&bin().arg("infer").arg("--ckpt").arg(&ckpt).arg("--clip").arg(&clip).output().unwrap());
    assert_eq!(run1, run2, "identical clip must produce identical output");
    assert!(run1.starts_with("label="), "{run1}");
    let probs = run1.split("probs=[").nth(1).unwrap();
    let nums: Vec<f64> = probs
        .trim_end()
        .trim_end_matches(']')
        .split(", ")
        .map(|s| s.parse().unwrap())
        .collect();
    assert_eq!(nums.len(), 2);
    assert!((nums[0] + nums[1] - 1.0).abs() < 2e-4, "probs must sum to 1: {nums:?}");
}

#[test]
fn inflate_subcommand_runs_a_plan_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("frames");
    ok(&bin()
        .args(["gen-data", "--count", "12", "--frames", "1", "--size", "32", "--seed", "6"])
        .arg("--out")
        .arg(&data)
        .output()
        .unwrap());

    // Pretrain the per-frame model.
    let config = dir.path().join("run2d.cfg");
    std::fs::write(&config, small_config(1, 1, 1)).unwrap();
    let ckpt2d = dir.path().join("model2d.ckpt");
    ok(&bin()
        .arg("train")
        .arg("--config")
        .arg(&config)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&ckpt2d)
        .output()
        .unwrap());

    // Plan: every conv of the 3D target, temporal kernels where the target
    // has them.
    let cfg3d = csg3dct::config::ModelConfig {
        channels: [4, 4, 8, 8, 8],
        embed_dim: 8,
        heads: 2,
        patch: 4,
        temporal_kernel: 3,
        input_size: 32,
        frames: 4,
        max_frames: 8,
        ..csg3dct::config::ModelConfig::default()
    };
    let target = csg3dct::model::Model::<f32>::new(&cfg3d, 0).unwrap();
    let plan = csg3dct::plan::InflationPlan::for_specs(&target.conv_layer_specs());
    let plan_path = dir.path().join("plan.cfg");
    plan.save(&plan_path).unwrap();

    let ckpt3d = dir.path().join("model3d.ckpt");
    let stdout = ok(&bin()
        .arg("inflate")
        .arg("--from")
        .arg(&ckpt2d)
        .arg("--plan")
        .arg(&plan_path)
        .arg("--out")
        .arg(&ckpt3d)
        .arg("--report")
        .output()
        .unwrap());
    assert!(stdout.contains("inflated"), "{stdout}");
    assert!(stdout.contains("copied:"), "--report should print the breakdown: {stdout}");
    assert!(ckpt3d.exists());

    // The inflated checkpoint classifies 4-frame clips.
    let clips4 = dir.path().join("clips4");
    ok(&bin()
        .args(["gen-data", "--count", "2", "--frames", "4", "--size", "32", "--seed", "8"])
        .arg("--out")
        .arg(&clips4)
        .output()
        .unwrap());
    let stdout = ok(&bin()
        .arg("infer")
        .arg("--ckpt")
        .arg(&ckpt3d)
        .arg("--clip")
        .arg(clips4.join("clip_000000.clip"))
        .output()
        .unwrap());
    assert!(stdout.starts_with("label="), "{stdout}");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.cfg");
    std::fs::write(&config, "learning_rate = 0.1\n").unwrap();
    let out = bin()
        .arg("train")
        .arg("--config")
        .arg(&config)
        .arg("--data")
        .arg(dir.path())
        .arg("--out")
        .arg(dir.path().join("x.ckpt"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("unknown key"), "{stderr}");
}

#[test]
fn corrupted_checkpoints_are_rejected_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&bin()
        .args(["gen-data", "--count", "1", "--frames", "4", "--size", "32", "--seed", "5"])
        .arg("--out")
        .arg(&data)
        .output()
        .unwrap());
    let clip = data.join("clip_000000.clip");
    let bytes = std::fs::read(&clip).unwrap();
    std::fs::write(&clip, &bytes[..bytes.len() - 5]).unwrap();
    let out = bin()
        .arg("infer")
        .arg("--ckpt")
        .arg(&clip) // not a model file either way
        .arg("--clip")
        .arg(&clip)
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("truncated") || stderr.contains("meta.config"), "{stderr}");
}

#[test]
fn verify_subcommand_filters_and_passes() {
    let stdout = ok(&bin().args(["verify", "--filter", "metrics"]).output().unwrap());
    assert!(stdout.contains("metrics.confusion_oracle"), "{stdout}");
    assert!(stdout.contains("PASS"), "{stdout}");
}

#[test]
fn clip_files_carry_exactly_frames_and_label() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    ok(&bin()
        .args(["gen-data", "--count", "1", "--frames", "2", "--size", "32", "--seed", "1"])
        .arg("--out")
        .arg(&data)
        .output()
        .unwrap());
    let c = csg3dct::checkpoint::Checkpoint::load(Path::new(&data.join("clip_000000.clip"))).unwrap();
    let names: Vec<&str> = c.names().collect();
    assert_eq!(names, ["frames", "label"]);
    assert_eq!(c.get("frames").unwrap().shape(), &[2, 1, 32, 32]);
    assert_eq!(c.get("label").unwrap().shape(), &[1]);
}
