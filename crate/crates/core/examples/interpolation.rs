//! Decodes blends of two behavior codes from the first sequence's start posture.
//!
//! cargo run --release --example interpolation

use behave::data::{make_dataset, DatasetConfig};
use behave::model::{ModelConfig, Objective, DEFAULT_LAMBDAS};
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
    let (a, b) = (&test[0], &test[test.len() - 1]);
    let blends = model.interpolate(a, b, &DEFAULT_LAMBDAS)?;
    println!("interpolating {} → {}", a.id, b.id);
    for (l, s) in DEFAULT_LAMBDAS.iter().zip(&blends) {
        let world = ds.stats.denormalize(s)?;
        let wrist = world.joint(world.frames() - 1, behave::skeleton::R_WRIST);
        println!("  λ = {l:.1}: final right-wrist height {:.3} m", wrist[1]);
    }
    Ok(())
}
