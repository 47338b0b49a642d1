//! Runs the transfer protocol (TDE, RE, d_β, action probe) for two objectives.
//!
//! cargo run --release --example transfer_metrics

use behave::data::{make_dataset, DatasetConfig};
use behave::eval::{run_transfer_eval, MetricReport, TransferEvalConfig, TransferModel};
use behave::model::{ModelConfig, Objective};
use behave::train::{train_vae, TrainConfig, TrainOutputs};

fn main() -> behave::Result<()> {
    let ds = make_dataset(&DatasetConfig {
        count_per_family: 40,
        frames: 20,
        ..DatasetConfig::default()
    })?;
    let (train, test) = ds.normalized()?;
    let mut models = Vec::new();
    for objective in [Objective::Full, Objective::Cae] {
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
            ..TrainConfig::desk(objective, 0)
        };
        models.push((objective.name(), train_vae(&train, &cfg, &TrainOutputs::default())?.state.model));
    }
    let refs: Vec<(&str, &dyn TransferModel)> = models.iter().map(|(n, m)| (*n, m as &dyn TransferModel)).collect();
    let cfg = TransferEvalConfig {
        pair_count: 50,
        steps: vec![1, 10, 20],
        ..TransferEvalConfig::default()
    };
    let report = MetricReport {
        transfer: run_transfer_eval(&refs, &train, &test, &cfg)?,
        ..MetricReport::default()
    };
    print!("{}", report.to_text());
    Ok(())
}
