//! Adam training loop over synthetic clips, with deterministic epoch logs
//! and best-validation checkpointing.

use std::collections::HashMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::{InitMode, RunConfig};
use crate::data::{batch_clips, frame_dataset, split_indices, ClipSample};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::inflate::{inflate_checkpoint, InflationReport};
use crate::metrics::{evaluate_metrics, Metrics};
use crate::model::{Fwd, Model, Params};
use crate::plan::InflationPlan;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

/// Adam with the torch-style L2 term folded into the gradient. Moment
/// buffers are keyed by parameter name.
pub struct Adam<T: Element> {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: HashMap<String, Vec<T>>,
    v: HashMap<String, Vec<T>>,
}

impl<T: Element> Adam<T> {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    /// One update over every parameter that received a gradient.
    pub fn step(
        &mut self,
        model: &mut Model<T>,
        binds: &[(String, Var)],
        grads: &Gradients<T>,
    ) -> Result<()> {
        self.step += 1;
        let b1 = T::of_f64(self.beta1);
        let b2 = T::of_f64(self.beta2);
        let one = T::one();
        let lr = T::of_f64(self.lr);
        let wd = T::of_f64(self.weight_decay);
        let eps = T::of_f64(self.eps);
        let bc1 = T::of_f64(1.0 - self.beta1.powi(self.step as i32));
        let bc2 = T::of_f64(1.0 - self.beta2.powi(self.step as i32));

        let mut gradmap: HashMap<&str, &Tensor<T>> = HashMap::with_capacity(binds.len());
        for (name, var) in binds {
            if let Some(g) = grads.get(*var) {
                gradmap.insert(name.as_str(), g);
            }
        }
        let (moments_m, moments_v) = (&mut self.m, &mut self.v);
        model.visit_mut(&mut |name, kind, p| {
            if kind != crate::model::ParamKind::Trainable {
                return;
            }
            let Some(grad) = gradmap.remove(name) else { return };
            let m = moments_m.entry(name.to_string()).or_insert_with(|| vec![T::zero(); grad.numel()]);
            let v = moments_v.entry(name.to_string()).or_insert_with(|| vec![T::zero(); grad.numel()]);
            let pd = p.data_mut();
            for i in 0..pd.len() {
                let g = grad.data()[i] + wd * pd[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                pd[i] = pd[i] - lr * mhat / (vhat.sqrt() + eps);
            }
        });
        if let Some(name) = gradmap.keys().next() {
            return Err(Error::Training(format!("optimizer bound unknown parameter {name:?}")));
        }
        Ok(())
    }
}

/// One epoch's log line, serialized in fixed field order.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub val_precision: f64,
    pub val_recall: f64,
    pub val_f1: f64,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} train_loss={:.6} train_acc={:.4} val_loss={:.6} val_acc={:.4} val_precision={:.4} val_recall={:.4} val_f1={:.4}",
            self.epoch,
            self.train_loss,
            self.train_acc,
            self.val_loss,
            self.val_acc,
            self.val_precision,
            self.val_recall,
            self.val_f1
        )
    }
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    pub log: Vec<EpochRecord>,
    pub best_val_acc: f64,
    pub best_epoch: usize,
    pub best_checkpoint: Checkpoint,
    /// Inflation report when the run warm-started from a 2D model.
    pub inflation: Option<InflationReport>,
}

/// Evaluate a model on clips: mean loss, metrics, and raw predictions.
pub fn evaluate(model: &Model<f32>, clips: &[ClipSample], batch_size: usize) -> Result<(f64, Metrics, Vec<usize>)> {
    if clips.is_empty() {
        return Err(Error::arg("evaluate", "no clips".to_string()));
    }
    let mut predictions = Vec::with_capacity(clips.len());
    let mut labels = Vec::with_capacity(clips.len());
    let mut loss_sum = 0.0f64;
    for chunk in clips.chunks(batch_size.max(1)) {
        let refs: Vec<&ClipSample> = chunk.iter().collect();
        let (batch, batch_labels) = batch_clips(&refs)?;
        let mut tape = Tape::inference();
        let mut fwd = Fwd::new(&mut tape, false);
        let clip_var = fwd.tape.constant(&batch);
        let (out, _) = model.forward(&mut fwd, clip_var, None)?;
        // Loss in eval mode, recomputed from the logits.
        let lc = fwd.tape.cross_entropy(out.conv_logits, &batch_labels)?;
        let lt = fwd.tape.cross_entropy(out.token_logits, &batch_labels)?;
        let l = fwd.tape.add(lc, lt)?;
        loss_sum += tape.value(l).item() as f64 * chunk.len() as f64;
        let probs = tape.value(out.probs);
        for r in 0..chunk.len() {
            let p = &probs.data()[r * 2..(r + 1) * 2];
            predictions.push(if p[1] > p[0] { 1 } else { 0 });
        }
        labels.extend_from_slice(&batch_labels);
    }
    let metrics = evaluate_metrics(&predictions, &labels)?;
    Ok((loss_sum / clips.len() as f64, metrics, predictions))
}

/// Pretrain the per-frame restriction of the configured model on individual
/// frames, for the inflated warm start.
pub fn pretrain_2d(run: &RunConfig, train_clips: &[ClipSample], epochs: usize, lr: f64) -> Result<Model<f32>> {
    let cfg2d = run.model.per_frame();
    let mut model = Model::<f32>::new(&cfg2d, run.seed ^ 0x2d)?;
    let frames = frame_dataset(train_clips);
    if frames.is_empty() {
        return Err(Error::Training("no frames for pretraining".to_string()));
    }
    let mut opt = Adam::new(lr, run.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed ^ 0x2d2d);
    let batch = run.batch_size.max(4);
    for _epoch in 0..epochs {
        let mut order: Vec<usize> = (0..frames.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(batch) {
            let mut data = Vec::new();
            let mut labels = Vec::new();
            let s = frames[0].0.shape().to_vec();
            for &i in chunk {
                data.extend_from_slice(frames[i].0.data());
                labels.push(frames[i].1);
            }
            let batch_t = Tensor::new(vec![chunk.len(), 1, 1, s[2], s[3]], data)?;
            let mut tape = Tape::new();
            let mut fwd = Fwd::new(&mut tape, true);
            let clip_var = fwd.tape.constant(&batch_t);
            let (_, loss) = model.forward(&mut fwd, clip_var, Some(&labels))?;
            let loss = loss.expect("labels were provided");
            let binds = fwd.binds().to_vec();
            let updates = fwd.take_stat_updates();
            if !tape.value(loss).is_finite() {
                return Err(Error::Training("non-finite loss during 2D pretraining".to_string()));
            }
            let grads = tape.backward(loss)?;
            opt.step(&mut model, &binds, &grads)?;
            model.apply_stat_updates(updates)?;
        }
    }
    Ok(model)
}

/// Build the initial model per the run's init mode. Inflated mode pretrains
/// a single-frame model on the training frames, then inflates its weights.
pub fn init_model(run: &RunConfig, train_clips: &[ClipSample]) -> Result<(Model<f32>, Option<InflationReport>)> {
    let mut model = Model::<f32>::new(&run.model, run.seed)?;
    match run.init {
        InitMode::Scratch => Ok((model, None)),
        InitMode::Inflated => {
            let pre_epochs = 2;
            let src = pretrain_2d(run, train_clips, pre_epochs, (run.lr * 10.0).min(1e-3))?;
            let plan = InflationPlan::for_specs(&model.conv_layer_specs());
            plan.validate_against(&model.conv_layer_specs())?;
            let (inflated, report) = inflate_checkpoint(&src.to_checkpoint(), &plan, &model.to_checkpoint())?;
            model.load_from_checkpoint(&inflated)?;
            Ok((model, Some(report)))
        }
    }
}

/// Full training run over a dataset that is split 70/10/20 by clip.
/// Deterministic for a fixed config and seed under single-threaded
/// execution.
pub fn train(run: &RunConfig, data: &[ClipSample]) -> Result<TrainOutcome> {
    train_with_stop(run, data, |_| false)
}

/// `train`, with an early-stop predicate evaluated on each epoch record.
pub fn train_with_stop(
    run: &RunConfig,
    data: &[ClipSample],
    stop: impl Fn(&EpochRecord) -> bool,
) -> Result<TrainOutcome> {
    run.validate()?;
    if data.len() < 8 {
        return Err(Error::Training(format!("need at least 8 clips, got {}", data.len())));
    }
    let (train_idx, val_idx, _test_idx) = split_indices(data.len(), run.seed);
    let train_clips: Vec<&ClipSample> = train_idx.iter().map(|&i| &data[i]).collect();
    let val_clips: Vec<ClipSample> = val_idx.iter().map(|&i| data[i].clone()).collect();
    let train_owned: Vec<ClipSample> = train_clips.iter().map(|c| (*c).clone()).collect();

    let (mut model, inflation) = init_model(run, &train_owned)?;
    let mut opt = Adam::new(run.lr, run.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed ^ 0x7a11);

    let mut log = Vec::with_capacity(run.epochs);
    let mut best_val_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_checkpoint = model.to_checkpoint();

    for epoch in 1..=run.epochs {
        let mut order: Vec<usize> = (0..train_clips.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        let mut correct = 0usize;
        for chunk in order.chunks(run.batch_size) {
            let refs: Vec<&ClipSample> = chunk.iter().map(|&i| train_clips[i]).collect();
            let (batch, labels) = batch_clips(&refs)?;
            let mut tape = Tape::new();
            let mut fwd = Fwd::new(&mut tape, true);
            let clip_var = fwd.tape.constant(&batch);
            let (out, loss) = model.forward(&mut fwd, clip_var, Some(&labels))?;
            let loss = loss.expect("labels were provided");
            let binds = fwd.binds().to_vec();
            let updates = fwd.take_stat_updates();
            let loss_val = tape.value(loss).item() as f64;
            if !loss_val.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch}, batch starting clip {}: loss={loss_val}, lr={}, seen={seen}",
                    chunk[0], run.lr
                )));
            }
            let probs = tape.value(out.probs).clone();
            for (r, &y) in labels.iter().enumerate() {
                let p = &probs.data()[r * 2..(r + 1) * 2];
                if (p[1] > p[0]) == (y == 1) {
                    correct += 1;
                }
            }
            let grads = tape.backward(loss)?;
            opt.step(&mut model, &binds, &grads)?;
            model.apply_stat_updates(updates)?;
            loss_sum += loss_val * refs.len() as f64;
            seen += refs.len();
        }

        let (val_loss, val_metrics, _) = evaluate(&model, &val_clips, run.batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            train_acc: correct as f64 / seen.max(1) as f64,
            val_loss,
            val_acc: val_metrics.accuracy,
            val_precision: val_metrics.precision,
            val_recall: val_metrics.recall,
            val_f1: val_metrics.f1,
        };
        // Ties go to the later (more trained) epoch.
        if val_metrics.accuracy >= best_val_acc {
            best_val_acc = val_metrics.accuracy;
            best_epoch = epoch;
            best_checkpoint = model.to_checkpoint();
        }
        let done = stop(&record);
        log.push(record);
        if done {
            break;
        }
    }

    Ok(TrainOutcome { model, log, best_val_acc, best_epoch, best_checkpoint, inflation })
}

/// Test-split view of a dataset under the run's seed.
pub fn test_split(run: &RunConfig, data: &[ClipSample]) -> Vec<ClipSample> {
    let (_, _, test_idx) = split_indices(data.len(), run.seed);
    test_idx.iter().map(|&i| data[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::data::generate_synthetic_dataset;

    fn tiny_run(seed: u64) -> RunConfig {
        RunConfig {
            model: ModelConfig {
                input_size: 32,
                frames: 4,
                embed_dim: 16,
                heads: 2,
                max_frames: 8,
                channels: [8, 8, 16, 16, 16],
                ..ModelConfig::default()
            },
            lr: 1e-3,
            weight_decay: 1e-4,
            epochs: 1,
            batch_size: 4,
            seed,
            init: InitMode::Scratch,
        }
    }

    #[test]
    fn zero_lr_leaves_parameters_bitwise_unchanged() {
        let data = generate_synthetic_dataset(12, 4, 32, 32, 0).unwrap();
        let mut run = tiny_run(1);
        run.lr = 0.0;
        run.epochs = 2;
        let reference = Model::<f32>::new(&run.model, run.seed).unwrap();
        let outcome = train(&run, &data).unwrap();
        let mut diffs = 0usize;
        let mut names = Vec::new();
        reference.visit(&mut |n, k, t| names.push((n.to_string(), k, t.clone())));
        outcome.model.visit(&mut |n, kind, t| {
            let (_, _, want) = names.iter().find(|(rn, _, _)| rn == n).unwrap();
            if kind == crate::model::ParamKind::Trainable {
                for (a, b) in want.data().iter().zip(t.data()) {
                    if a.to_bits() != b.to_bits() {
                        diffs += 1;
                    }
                }
            }
        });
        assert_eq!(diffs, 0, "lr=0 must leave trainable parameters untouched");
    }

    #[test]
    fn training_is_deterministic_for_a_fixed_seed() {
        let data = generate_synthetic_dataset(12, 4, 32, 32, 2).unwrap();
        let run = tiny_run(3);
        let a = train(&run, &data).unwrap();
        let b = train(&run, &data).unwrap();
        assert_eq!(a.log, b.log, "identical seeds must produce identical epoch logs");
    }

    #[test]
    fn epoch_records_have_fixed_field_order() {
        let rec = EpochRecord {
            epoch: 3,
            train_loss: 0.5,
            train_acc: 0.75,
            val_loss: 0.6,
            val_acc: 0.8,
            val_precision: 0.81,
            val_recall: 0.79,
            val_f1: 0.8,
        };
        let line = rec.to_string();
        let fields: Vec<&str> = line.split(' ').map(|f| f.split('=').next().unwrap()).collect();
        assert_eq!(
            fields,
            ["epoch", "train_loss", "train_acc", "val_loss", "val_acc", "val_precision", "val_recall", "val_f1"]
        );
    }
}
