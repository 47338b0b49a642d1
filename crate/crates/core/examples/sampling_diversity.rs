//! ASD/FSD of behaviors sampled from the prior, next to a collapsed generator.
//!
//! cargo run --release --example sampling_diversity

use behave::data::{make_dataset, DatasetConfig};
use behave::eval::{asd, fsd, run_diversity_eval, DiversityEvalConfig};
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
    for row in run_diversity_eval(&model, None, &test, &DiversityEvalConfig::default())? {
        println!("{:>5} N={:<3} ASD {:.4}  FSD {:.4}", row.source, row.samples, row.asd, row.fsd);
    }
    let constant = model.decode(&vec![0.0; cfg.model.latent], test[0].first_frame(), cfg.model.frames)?;
    let collapsed = vec![constant; 10];
    println!("collapsed N=10   ASD {:.4}  FSD {:.4}", asd(&collapsed)?, fsd(&collapsed)?);
    Ok(())
}
