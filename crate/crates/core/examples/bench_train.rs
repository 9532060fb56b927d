use modlab_core::model::{train, DiT, ModelConfig, TrainConfig};
use modlab_core::world::{sample_dataset, Encoders};
use std::time::Instant;

fn main() {
    let config = ModelConfig::default();
    let model = DiT::<f32>::new(config, 7).unwrap();
    let encoders = Encoders::new(7, 32, 64).unwrap();
    let dataset = sample_dataset(7, 1000, 7).unwrap();
    let tc = TrainConfig { steps: 30, ..TrainConfig::default() };
    let t0 = Instant::now();
    let out = train(&model, &dataset, &encoders, &tc, |_, _| {}).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!("30 steps in {dt:.2}s = {:.2} steps/s; first loss {:.4}, last {:.4}", 30.0/dt, out.history[0], out.history[29]);
    println!("5000 steps would take {:.1} min", 5000.0/(30.0/dt)/60.0);
}
