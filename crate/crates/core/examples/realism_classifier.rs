//! Held-out accuracy of the real-vs-generated classifier for each synthesis type.
//!
//! cargo run --release --example realism_classifier

use behave::data::{make_dataset, DatasetConfig};
use behave::eval::{realism_generations, reality_classifier, RealityConfig};
use behave::model::{ModelConfig, Objective};
use behave::train::{train_vae, TrainConfig, TrainOutputs};

fn main() -> behave::Result<()> {
    let ds = make_dataset(&DatasetConfig {
        count_per_family: 40,
        frames: 20,
        ..DatasetConfig::default()
    })?;
    let (train, test) = ds.normalized()?;
    let cfg = TrainConfig {
        model: ModelConfig {
            frames: 20,
            latent: 16,
            hidden: 32,
            aux_hidden: 32,
            ..ModelConfig::default()
        },
        epochs: 12,
        decay_epochs: vec![],
        ..TrainConfig::desk(Objective::Full, 0)
    };
    let model = train_vae(&train, &cfg, &TrainOutputs::default())?.state.model;
    let real: Vec<_> = test.iter().chain(&train).cloned().collect();
    let rc = RealityConfig::default();
    println!("accuracy 0.5 = indistinguishable from real data");
    for (kind, generated) in realism_generations(&model, None, &real, 0)? {
        println!("  {kind:<9} {:.3}", reality_classifier(&real, &generated, &rc)?);
    }
    let zeros: Vec<_> = real.iter().map(|s| s.with_data(vec![0.0; s.data().len()])).collect::<behave::Result<_>>()?;
    println!("  {:<9} {:.3}", "all-zero", reality_classifier(&real, &zeros, &rc)?);
    Ok(())
}
