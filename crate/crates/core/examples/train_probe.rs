use csg3dct::config::{InitMode, ModelConfig, RunConfig};
use csg3dct::data::generate_synthetic_dataset;
use csg3dct::train::{evaluate, test_split, train};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let count: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(100);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(3);
    let lr: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1e-3);

    let t0 = Instant::now();
    let data = generate_synthetic_dataset(count, 8, 64, 64, 42).unwrap();
    println!("gen {} clips: {:.1}s", count, t0.elapsed().as_secs_f64());

    let run = RunConfig {
        model: ModelConfig::default(),
        lr,
        weight_decay: 1e-4,
        epochs,
        batch_size: 4,
        seed: 0,
        init: InitMode::Scratch,
    };
    let t0 = Instant::now();
    let out = train(&run, &data).unwrap();
    println!("train {} epochs: {:.1}s", epochs, t0.elapsed().as_secs_f64());
    for r in &out.log {
        println!("{r}");
    }
    let test = test_split(&run, &data);
    let (_, m, _) = evaluate(&out.model, &test, 4).unwrap();
    println!("test acc={:.4} f1={:.4}", m.accuracy, m.f1);
}
