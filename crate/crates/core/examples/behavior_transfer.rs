//! Re-enacts one sequence's behavior from another sequence's first posture.
//!
//! cargo run --release --example behavior_transfer

use behave::data::{make_dataset, DatasetConfig};
use behave::eval::{d_beta, tde};
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
    let source = &test[0];
    let target = &test[test.len() - 1];
    let out = model.transfer(source, target.first_frame())?;
    println!("source {} ({:?}) re-enacted from the first posture of {}", source.id, source.family, target.id);
    for t in [1, 10, 20] {
        println!("  TDE@{t:<2} {:.4}", tde(source, &out, t)?);
    }
    println!("  d_β    {:.4}", d_beta(&model, source, &out)?);
    let world = ds.stats.denormalize(&out)?;
    println!("first re-enacted pelvis position (m): {:?}", world.joint(0, behave::skeleton::PELVIS));
    Ok(())
}
