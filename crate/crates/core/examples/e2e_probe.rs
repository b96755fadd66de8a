use csg3dct::config::{FusionMode, InitMode, ModelConfig, RunConfig};
use csg3dct::data::generate_synthetic_dataset;
use csg3dct::model::Model;
use csg3dct::train::{evaluate, test_split, train_with_stop};
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let data = generate_synthetic_dataset(1000, 8, 64, 64, 2024).unwrap();
    println!("gen 1000 clips: {:.1}s", t0.elapsed().as_secs_f64());
    let run = RunConfig {
        model: ModelConfig { fusion: FusionMode::Ca, ..ModelConfig::default() },
        lr: 1e-3,
        weight_decay: 1e-4,
        epochs: 20,
        batch_size: 4,
        seed: 11,
        init: InitMode::Scratch,
    };
    let t0 = Instant::now();
    let out = train_with_stop(&run, &data, |r| r.val_acc >= 0.99).unwrap();
    println!("train: {:.1}s", t0.elapsed().as_secs_f64());
    for r in &out.log {
        println!("{r}");
    }
    let mut best = Model::<f32>::new(&run.model, 0).unwrap();
    best.load_from_checkpoint(&out.best_checkpoint).unwrap();
    let test = test_split(&run, &data);
    let (_, m, _) = evaluate(&best, &test, 8).unwrap();
    println!("test: acc={:.4} precision={:.4} recall={:.4} f1={:.4} n={}", m.accuracy, m.precision, m.recall, m.f1, test.len());
}
