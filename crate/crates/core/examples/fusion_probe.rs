use csg3dct::config::{FusionMode, InitMode, ModelConfig, RunConfig};
use csg3dct::data::generate_synthetic_dataset;
use csg3dct::model::Model;
use csg3dct::train::{evaluate, test_split, train};
use std::time::Instant;

fn main() {
    let data = generate_synthetic_dataset(400, 8, 64, 64, 99).unwrap();
    for mode in [FusionMode::Ca, FusionMode::Swa, FusionMode::None] {
        let mut finals = Vec::new();
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
            let t0 = Instant::now();
            let out = train(&run, &data).unwrap();
            let mut best = Model::<f32>::new(&run.model, 0).unwrap();
            best.load_from_checkpoint(&out.best_checkpoint).unwrap();
            let test = test_split(&run, &data);
            let (_, m, _) = evaluate(&best, &test, 8).unwrap();
            finals.push(m.accuracy);
            let vals: Vec<String> = out.log.iter().map(|r| format!("{:.2}", r.val_acc)).collect();
            println!(
                "{:?} seed={} bestval_test={:.3} best@{} vals=[{}] ({:.0}s)",
                mode, seed, m.accuracy, out.best_epoch, vals.join(","), t0.elapsed().as_secs_f64()
            );
        }
        println!("{:?} mean={:.4}", mode, finals.iter().sum::<f64>() / 3.0);
    }
}
