//! Ranks the training corpus against a query by posture and by behavior code.
//!
//! cargo run --release --example nearest_neighbors

use behave::data::{make_dataset, DatasetConfig};
use behave::eval::{nearest_neighbors, NnMetric};
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
        epochs: 12,
        decay_epochs: vec![],
        ..TrainConfig::desk(Objective::Full, 0)
    };
    let model = train_vae(&train, &cfg, &TrainOutputs::default())?.state.model;
    // queries and corpus are in world coordinates
    let query = &ds.test[0];
    println!("query {}", query.id);
    for (label, metric) in [("posture", NnMetric::Posture), ("latent", NnMetric::Latent(&model, &ds.stats))] {
        let ranked = nearest_neighbors(query, &ds.train, metric)?;
        let top: Vec<String> = ranked.iter().take(5).map(|(id, d)| format!("{id} ({d:.3})")).collect();
        println!("  {label:>7}: {}", top.join(", "));
    }
    Ok(())
}
