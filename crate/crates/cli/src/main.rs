use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};


use csg3dct::config::RunConfig;
use csg3dct::data::{generate_synthetic_dataset, load_clip, load_dataset, save_dataset};
use csg3dct::inflate::inflate_checkpoint;
use csg3dct::model::{Fwd, Model};
use csg3dct::modelfile::{load_model_file, load_model_file_for_frames, params_only, save_model_file};
use csg3dct::plan::InflationPlan;
use csg3dct::tape::Tape;
use csg3dct::train::{evaluate, train};
use csg3dct::verify::{render_table, run_fast_checks, run_training_checks};

#[derive(Parser)]
#[command(name = "csg3dct", about = "Inflated 3D convolution-transformer video classifier", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic stenosis-like clip dataset.
    GenData {
        /// Number of clips.
        #[arg(long)]
        count: usize,
        /// Frames per clip.
        #[arg(long, default_value_t = 8)]
        frames: usize,
        /// Square frame side in pixels.
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Generator seed; identical seeds reproduce the files bitwise.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for the .clip files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a clip directory and write the best-validation checkpoint.
    Train {
        /// Plain-text `key = value` config file.
        #[arg(long)]
        config: PathBuf,
        /// Directory of .clip files.
        #[arg(long)]
        data: PathBuf,
        /// Output checkpoint path (an epoch log lands next to it as .log).
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint over every clip in a directory.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Classify one clip file.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        clip: PathBuf,
    },
    /// Inflate a single-frame checkpoint into a video checkpoint per a plan.
    Inflate {
        /// Source 2D checkpoint (as written by `train`).
        #[arg(long)]
        from: PathBuf,
        /// Inflation plan file.
        #[arg(long)]
        plan: PathBuf,
        /// Output checkpoint.
        #[arg(long)]
        out: PathBuf,
        /// Print the copied / inflated / randomized report.
        #[arg(long)]
        report: bool,
    },
    /// Run the invariant/oracle suite and print a pass/fail table.
    Verify {
        /// Include the training-based checks (several minutes).
        #[arg(long)]
        full: bool,
        /// Only run checks whose name contains this substring.
        #[arg(long)]
        filter: Option<String>,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::GenData { count, frames, size, seed, out } => {
            let clips = generate_synthetic_dataset(count, frames, size, size, seed)?;
            save_dataset(&out, &clips)?;
            let severe = clips.iter().filter(|c| c.label == 1).count();
            println!(
                "wrote {count} clips ({severe} severe / {} mild) to {}",
                count - severe,
                out.display()
            );
            Ok(())
        }
        Command::Train { config, data, out } => {
            let run = RunConfig::load(&config).with_context(|| format!("reading {}", config.display()))?;
            let clips = load_dataset(&data)?;
            let outcome = train(&run, &clips)?;
            if let Some(report) = &outcome.inflation {
                println!("warm start report:\n{}", report.render());
            }
            let mut log_text = String::new();
            for r in &outcome.log {
                println!("{r}");
                log_text.push_str(&r.to_string());
                log_text.push('\n');
            }
            let mut best = Model::<f32>::new(&run.model, run.seed)?;
            best.load_from_checkpoint(&outcome.best_checkpoint)?;
            save_model_file(&out, &best, &run)?;
            std::fs::write(out.with_extension("log"), log_text)?;
            println!(
                "best val_acc {:.4} at epoch {}; checkpoint written to {}",
                outcome.best_val_acc,
                outcome.best_epoch,
                out.display()
            );
            Ok(())
        }
        Command::Eval { ckpt, data } => {
            let clips = load_dataset(&data)?;
            let frames = clips[0].frames.shape()[0];
            let (_, model) = load_model_file_for_frames(&ckpt, frames)?;
            let (loss, m, _) = evaluate(&model, &clips, 8)?;
            println!(
                "clips={} loss={loss:.6} accuracy={:.4} precision={:.4} recall={:.4} f1={:.4}",
                clips.len(),
                m.accuracy,
                m.precision,
                m.recall,
                m.f1
            );
            Ok(())
        }
        Command::Infer { ckpt, clip } => {
            let (frames, _) = load_clip(&clip)?;
            let s = frames.shape().to_vec();
            let (run, model) = load_model_file_for_frames(&ckpt, s[0])?;
            if s[2] != run.model.input_size || s[3] != run.model.input_size {
                bail!(
                    "clip is {}x{} but the checkpointed model expects {}x{}",
                    s[2],
                    s[3],
                    run.model.input_size,
                    run.model.input_size
                );
            }
            let batch = frames.reshaped(&[1, 1, s[0], s[2], s[3]])?;
            let mut tape = Tape::inference();
            let mut fwd = Fwd::new(&mut tape, false);
            let c = fwd.tape.constant(&batch);
            let (out, _) = model.forward(&mut fwd, c, None)?;
            let probs = tape.value(out.probs);
            let (p_mild, p_severe) = (probs.data()[0], probs.data()[1]);
            let label = if p_severe > p_mild { "severe" } else { "mild" };
            println!("label={label} probs=[{p_mild:.4}, {p_severe:.4}]");
            Ok(())
        }
        Command::Inflate { from, plan, out, report } => {
            let (src_run, src_model) = load_model_file(&from)?;
            let plan = InflationPlan::load(&plan)?;
            let target_tk = plan.entries.iter().map(|e| e.t).max().unwrap_or(1);
            let mut target_run = src_run.clone();
            target_run.model.temporal_kernel = target_tk;
            let mut target = Model::<f32>::new(&target_run.model, src_run.seed)?;
            plan.validate_against(&target.conv_layer_specs())?;
            let src_ckpt = params_only(&src_model.to_checkpoint())?;
            let (inflated, rep) = inflate_checkpoint(&src_ckpt, &plan, &target.to_checkpoint())?;
            target.load_from_checkpoint(&inflated)?;
            save_model_file(&out, &target, &target_run)?;
            if report {
                println!("{}", rep.render());
            }
            println!(
                "inflated {} tensors ({} copied, {} randomized) into {}",
                rep.inflated.len(),
                rep.copied.len(),
                rep.randomized.len(),
                out.display()
            );
            Ok(())
        }
        Command::Verify { full, filter } => {
            let mut results = run_fast_checks();
            if full {
                results.extend(run_training_checks());
            }
            if let Some(f) = &filter {
                results.retain(|r| r.name.contains(f.as_str()));
            }
            print!("{}", render_table(&results));
            let failed = results.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                bail!("{failed} check(s) failed");
            }
            println!("all {} checks passed", results.len());
            Ok(())
        }
    }
}
