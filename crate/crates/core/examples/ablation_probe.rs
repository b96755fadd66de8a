use csg3dct::config::{FusionMode, InitMode, ModelConfig, RunConfig};
use csg3dct::data::generate_synthetic_dataset;
use csg3dct::train::train;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let count: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(150);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(5);
    let lr: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(3e-4);

    let data = generate_synthetic_dataset(count, 8, 64, 64, 77).unwrap();
    for init in [InitMode::Scratch, InitMode::Inflated] {
        for seed in [1u64, 2, 3] {
            let run = RunConfig {
                model: ModelConfig { fusion: FusionMode::Ca, ..ModelConfig::default() },
                lr,
                weight_decay: 1e-4,
                epochs,
                batch_size: 4,
                seed,
                init,
            };
            let t0 = Instant::now();
            let out = train(&run, &data).unwrap();
            let accs: Vec<String> = out.log.iter().map(|r| format!("{:.3}", r.val_acc)).collect();
            println!(
                "{:?} seed={} val_accs=[{}] ({:.0}s)",
                init,
                seed,
                accs.join(","),
                t0.elapsed().as_secs_f64()
            );
        }
    }
}
