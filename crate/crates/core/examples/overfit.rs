//! Overfits the default model on the 8-utterance toy corpus and prints the
//! loss terms every 25 steps.
//!
//!     cargo run --release -p tinytts --example overfit

use std::time::Instant;

use tinytts::dsp::SpectrogramConfig;
use tinytts::model::ModelConfig;
use tinytts::training::{generate_toy_dataset, train, TrainConfig, TrainSample};
use tinytts::Model32;

fn main() -> tinytts::Result<()> {
    let spec = SpectrogramConfig::default();
    let data: Vec<TrainSample> = generate_toy_dataset(8, 7, &spec)?.into_iter().map(|t| t.sample).collect();
    let mut model = Model32::new(ModelConfig::default(), spec, 7)?;
    let t0 = Instant::now();
    let log = train(&mut model, &data, &TrainConfig::overfit())?;
    println!("step  lr        l_mel   l_p     l_e     l_d      total     grad_norm");
    for r in log.iter().step_by(25).chain(log.last()) {
        println!(
            "{:4}  {:.2e}  {:.4}  {:.4}  {:.4}  {:7.4}  {:8.4}  {:.3}",
            r.step, r.lr, r.l_mel, r.l_p, r.l_e, r.l_d, r.total, r.grad_norm
        );
    }
    let drop = 1.0 - log.last().map_or(f64::NAN, |r| r.total) / log[0].total;
    println!("total loss fell {:.1}% in {:.1?}", 100.0 * drop, t0.elapsed());
    Ok(())
}
