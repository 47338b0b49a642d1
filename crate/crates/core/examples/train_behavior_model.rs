//! Trains a small behavior model and follows the KL budget through the dual update.
//!
//! cargo run --release --example train_behavior_model

use behave::data::{make_dataset, DatasetConfig};
use behave::model::{ModelConfig, Objective};
use behave::train::{train_vae, TrainConfig, TrainOutputs};

fn main() -> behave::Result<()> {
    let ds = make_dataset(&DatasetConfig {
        count_per_family: 40,
        frames: 20,
        ..DatasetConfig::default()
    })?;
    let (train, _) = ds.normalized()?;
    let cfg = TrainConfig {
        model: ModelConfig {
            frames: 20,
            latent: 16,
            hidden: 32,
            aux_hidden: 32,
            ..ModelConfig::default()
        },
        epochs: 8,
        decay_epochs: vec![6],
        ..TrainConfig::desk(Objective::Full, 0)
    };
    let dir = std::env::temp_dir().join("behave-train");
    let out = train_vae(
        &train,
        &cfg,
        &TrainOutputs {
            checkpoint_dir: Some(dir.clone()),
            stats: Some(ds.stats.clone()),
            ..TrainOutputs::default()
        },
    )?;
    println!("I_KL = {:.3} nats", cfg.i_kl());
    println!("epoch  recon     KL      γ_KL");
    for epoch in 0..cfg.epochs {
        let recs: Vec<_> = out.log.iter().filter(|r| r.epoch == epoch).collect();
        let mean = |f: fn(&behave::train::TrainLogRecord) -> f64| recs.iter().map(|r| f(r)).sum::<f64>() / recs.len() as f64;
        println!("{epoch:>5}  {:.4}  {:.3}  {:.2e}", mean(|r| r.recon_mse), mean(|r| r.kl_nats), recs.last().unwrap().gamma_kl);
    }
    println!("checkpoint: {}", dir.join("last.ckpt").display());
    Ok(())
}
