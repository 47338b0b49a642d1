//! Fits the flow prior to behavior codes and compares recursive synthesis
//! from raw prior draws against flow draws.
//!
//! cargo run --release --example flow_sampling

use behave::data::{make_dataset, DatasetConfig};
use behave::flow::{boundary_displacements, recursive_sample, train_flow, CodeSource, FlowTrainConfig};
use behave::model::{ModelConfig, Objective};
use behave::train::{train_vae, TrainConfig, TrainOutputs};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

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
    let fit = train_flow(&model, &train, &FlowTrainConfig { epochs: 20, lr: 1e-3, ..FlowTrainConfig::default() })?;
    println!("flow NLL per epoch: {:?}", fit.epoch_nll.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>());
    for (name, source) in [("prior", CodeSource::Prior), ("flow", CodeSource::Flow(&fit.flow))] {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let seq = recursive_sample(&model, test[0].first_frame(), 5, source, &mut rng)?;
        let d = boundary_displacements(&seq, cfg.model.frames);
        println!("{name:>5}: {} frames, boundary displacements {:?}", seq.frames(), d.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
    }
    Ok(())
}
