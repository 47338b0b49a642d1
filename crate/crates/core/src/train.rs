//! Training loops: alternating ψ / (θ, φ) optimization with dual ascent on
//! the KL budget, learning-rate decay, per-epoch checkpoints, JSON-lines
//! logs and bit-identical resume; plus the flow-fitting stage.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{derive_seed, NormStats, PoseSequence};
use crate::error::{Error, Result};
use crate::fsutil::{sha256_hex, write_atomic};
use crate::graph::Graph;
use crate::model::{batch_vars, encode_graph, loss_aux, loss_main, sample_code, BehaviorModel, BudgetState, ModelConfig, Objective};
use crate::nn::standard_normal;
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::params::clip_global_norm;
use crate::tensor::Tensor;

/// Everything that determines a behavior-model training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub objective: Objective,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs (0-based) from which the learning rate is divided by another 10.
    pub decay_epochs: Vec<usize>,
    pub gamma_c: f64,
    /// Information budget in nats; `None` means `100 · D / 1024`.
    pub i_kl: Option<f64>,
    pub gamma_kl_init: f64,
    pub dual_lr: f64,
    /// Global-norm clip applied to the encoder/decoder gradients.
    pub grad_clip: f64,
    /// Cap the adversarial reward at the running mean reconstruction error.
    pub aux_cap: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            objective: Objective::Full,
            epochs: 30,
            batch_size: 32,
            lr: 1e-4,
            decay_epochs: vec![10, 25],
            gamma_c: 0.1,
            i_kl: None,
            gamma_kl_init: 1.0,
            dual_lr: 1e-3,
            grad_clip: 5.0,
            aux_cap: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Reduced setup that trains in about a minute on one core: a smaller
    /// network, larger steps and a small initial KL weight so the code does
    /// not collapse before the dual update takes over.
    pub fn desk(objective: Objective, seed: u64) -> Self {
        Self {
            model: ModelConfig {
                latent: 32,
                hidden: 64,
                aux_hidden: 128,
                ..ModelConfig::default()
            },
            objective,
            batch_size: 16,
            lr: 1e-3,
            gamma_kl_init: 0.01,
            seed,
            ..Self::default()
        }
    }

    pub fn i_kl(&self) -> f64 {
        self.i_kl.unwrap_or(100.0 * self.model.latent as f64 / 1024.0)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(Error::contract("batch size must be positive"));
        }
        if !(self.lr > 0.0) || !(self.dual_lr >= 0.0) || !(self.grad_clip > 0.0) || !(self.gamma_c >= 0.0) {
            return Err(Error::contract("learning rates, clip norm and γ_C must be positive"));
        }
        if !(self.gamma_kl_init >= 0.0) {
            return Err(Error::contract("γ_KL must start non-negative"));
        }
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::contract("decay epochs must be strictly increasing"));
        }
        if self.decay_epochs.iter().any(|&d| d > self.epochs) {
            return Err(Error::contract(format!(
                "decay epochs {:?} must not exceed the {} training epochs",
                self.decay_epochs, self.epochs
            )));
        }
        Ok(())
    }

    /// Hash of the canonical JSON form. `epochs` is excluded so a run may be
    /// resumed towards a larger epoch count.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().expect("object").remove("epochs");
        sha256_hex(v.to_string().as_bytes())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.decay_epochs.iter().filter(|&&d| d <= epoch).count();
        self.lr * 0.1f64.powi(decays as i32)
    }

    /// Budget state at the start of training for this objective.
    pub fn initial_budget(&self) -> BudgetState {
        let base = BudgetState {
            gamma_kl: self.gamma_kl_init,
            i_kl: self.i_kl(),
            gamma_c: self.gamma_c,
            dual_lr: self.dual_lr,
        };
        match self.objective {
            Objective::Full => base,
            Objective::DisableAux => BudgetState { gamma_c: 0.0, ..base },
            Objective::VanillaCvae => BudgetState {
                gamma_kl: 1.0,
                i_kl: 0.0,
                gamma_c: 0.0,
                dual_lr: 0.0,
            },
            Objective::Cae => BudgetState {
                gamma_kl: 0.0,
                i_kl: 0.0,
                gamma_c: 0.0,
                dual_lr: 0.0,
            },
        }
    }
}

/// One optimizer iteration's diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub epoch: usize,
    pub iteration: usize,
    pub recon_mse: f64,
    pub kl_nats: f64,
    pub aux_mse: f64,
    pub gamma_kl: f64,
    pub lr: f64,
}

/// Complete resumable training state.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: BehaviorModel,
    pub adam_encoder: AdamState,
    pub adam_decoder: AdamState,
    pub adam_aux: AdamState,
    pub budget: BudgetState,
    /// Running mean of the reconstruction error (cap of the adversarial reward).
    pub recon_mean: Option<f64>,
    /// Number of completed epochs.
    pub epoch: usize,
    pub iteration: usize,
}

/// Where training writes its artifacts; all optional.
#[derive(Clone, Debug, Default)]
pub struct TrainOutputs {
    /// Directory receiving `last.ckpt` after every epoch.
    pub checkpoint_dir: Option<PathBuf>,
    /// Also keep `epoch-NNN.ckpt` for every epoch.
    pub keep_every_epoch: bool,
    /// JSON-lines training log.
    pub log_path: Option<PathBuf>,
    /// Normalization statistics of the training data, embedded in every
    /// checkpoint so the model can be applied to world coordinates.
    pub stats: Option<NormStats>,
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub log: Vec<TrainLogRecord>,
}

const RECON_EMA: f64 = 0.98;

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = BehaviorModel::init(cfg.model, cfg.seed)?;
        Ok(Self {
            adam_encoder: AdamState::new(&model.encoder),
            adam_decoder: AdamState::new(&model.decoder),
            adam_aux: AdamState::new(&model.aux),
            model,
            budget: cfg.initial_budget(),
            recon_mean: None,
            epoch: 0,
            iteration: 0,
        })
    }

    pub fn to_checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        let manifest = serde_json::json!({
            "kind": "behavior-model",
            "config_hash": cfg.hash(),
            "config": cfg,
            "seed": cfg.seed,
            "epoch": self.epoch,
            "iteration": self.iteration,
            "budget": self.budget,
            "recon_mean": self.recon_mean,
        });
        let mut c = Checkpoint::new(manifest);
        c.put_params("encoder", &self.model.encoder);
        c.put_params("decoder", &self.model.decoder);
        c.put_params("aux", &self.model.aux);
        c.put_adam("encoder", &self.adam_encoder);
        c.put_adam("decoder", &self.adam_decoder);
        c.put_adam("aux", &self.adam_aux);
        c
    }

    /// Rebuilds the state from a checkpoint written with the same config
    /// (up to the epoch count).
    pub fn from_checkpoint(c: &Checkpoint, cfg: &TrainConfig) -> Result<Self> {
        let stored = c
            .manifest
            .get("config_hash")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::contract("checkpoint manifest has no config hash"))?;
        if stored != cfg.hash() {
            return Err(Error::contract(format!(
                "config hash mismatch: checkpoint {stored}, current {}",
                cfg.hash()
            )));
        }
        let mut st = Self::new(cfg)?;
        c.restore_into("encoder", &mut st.model.encoder)?;
        c.restore_into("decoder", &mut st.model.decoder)?;
        c.restore_into("aux", &mut st.model.aux)?;
        st.adam_encoder = c.adam("encoder", &st.model.encoder)?;
        st.adam_decoder = c.adam("decoder", &st.model.decoder)?;
        st.adam_aux = c.adam("aux", &st.model.aux)?;
        let m = &c.manifest;
        st.budget = serde_json::from_value(m["budget"].clone())?;
        st.recon_mean = serde_json::from_value(m["recon_mean"].clone())?;
        st.epoch = serde_json::from_value(m["epoch"].clone())?;
        st.iteration = serde_json::from_value(m["iteration"].clone())?;
        Ok(st)
    }
}

/// Normalization statistics embedded in a model checkpoint.
pub fn checkpoint_stats(c: &Checkpoint) -> Result<NormStats> {
    match c.manifest.get("norm_stats") {
        Some(v) if !v.is_null() => Ok(serde_json::from_value(v.clone())?),
        _ => Err(Error::contract("checkpoint carries no normalization statistics")),
    }
}

/// Loads only the trained networks from a behavior-model checkpoint.
pub fn load_model(c: &Checkpoint) -> Result<(BehaviorModel, TrainConfig)> {
    if c.manifest.get("kind").and_then(|k| k.as_str()) != Some("behavior-model") {
        return Err(Error::contract("checkpoint does not hold a behavior model"));
    }
    let cfg: TrainConfig = serde_json::from_value(c.manifest["config"].clone())?;
    let mut model = BehaviorModel::init(cfg.model, cfg.seed)?;
    c.restore_into("encoder", &mut model.encoder)?;
    c.restore_into("decoder", &mut model.decoder)?;
    c.restore_into("aux", &mut model.aux)?;
    Ok((model, cfg))
}

fn check_data(data: &[PoseSequence], cfg: &TrainConfig) -> Result<()> {
    for s in data {
        if s.frames() != cfg.model.frames || s.joints() != cfg.model.joints {
            return Err(Error::contract(format!(
                "training sequence `{}` is {}×{}, model expects {}×{}",
                s.id,
                s.frames(),
                s.joints(),
                cfg.model.frames,
                cfg.model.joints
            )));
        }
    }
    Ok(())
}

fn adam(lr: f64) -> AdamConfig {
    AdamConfig {
        lr,
        ..AdamConfig::default()
    }
}

/// One alternating iteration on a batch. Returns the log record.
fn train_step(st: &mut TrainState, batch: &[&PoseSequence], cfg: &TrainConfig, lr: f64, rng: &mut ChaCha8Rng) -> Result<TrainLogRecord> {
    let mcfg = cfg.model;
    let b = batch.len();
    let mut g = Graph::new();
    let enc = st.model.encoder.bind(&mut g, true);
    let dec = st.model.decoder.bind(&mut g, true);
    let x = batch_vars(&mut g, batch)?;
    let (mu, logvar) = encode_graph(&mut g, &enc, x.x_time_major, b, &mcfg)?;
    let z = if cfg.objective.samples_code() {
        let eps = standard_normal(&[b, mcfg.latent], rng);
        sample_code(&mut g, mu, logvar, eps)?
    } else {
        mu
    };

    // (a) auxiliary step on a detached code
    {
        let mut g2 = Graph::new();
        let aux = st.model.aux.bind(&mut g2, true);
        let zd = g2.constant(g.value(z).clone());
        let xb = g2.constant(g.value(x.x_batch_major).clone());
        let l = loss_aux(&mut g2, &aux, zd, xb, &mcfg)?;
        let value = g2.value(l).item();
        if !value.is_finite() {
            return Err(Error::Diverged {
                epoch: st.epoch,
                iteration: st.iteration,
                last_good: None,
            });
        }
        let grads = g2.backward(l)?;
        let ga = aux.grads(&grads, &st.model.aux);
        adam_step(&mut st.model.aux, &ga, &mut st.adam_aux, &adam(lr))?;
    }

    // (b) encoder/decoder step against the frozen, freshly updated ψ
    let aux_frozen = st.model.aux.bind(&mut g, false);
    let cap = if cfg.aux_cap { st.recon_mean } else { None };
    let terms = loss_main(&mut g, &dec, &aux_frozen, &x, z, mu, logvar, &st.budget, cap, &mcfg)?;
    let (recon, kl, aux_mse, total) = (
        g.value(terms.recon).item(),
        g.value(terms.kl).item(),
        g.value(terms.aux).item(),
        g.value(terms.total).item(),
    );
    if !(recon.is_finite() && kl.is_finite() && total.is_finite()) {
        return Err(Error::Diverged {
            epoch: st.epoch,
            iteration: st.iteration,
            last_good: None,
        });
    }
    let grads = g.backward(terms.total)?;
    let mut ge = enc.grads(&grads, &st.model.encoder);
    let mut gd = dec.grads(&grads, &st.model.decoder);
    if !(ge.is_finite() && gd.is_finite()) {
        return Err(Error::Diverged {
            epoch: st.epoch,
            iteration: st.iteration,
            last_good: None,
        });
    }
    clip_global_norm(&mut [&mut ge, &mut gd], cfg.grad_clip);
    adam_step(&mut st.model.encoder, &ge, &mut st.adam_encoder, &adam(lr))?;
    adam_step(&mut st.model.decoder, &gd, &mut st.adam_decoder, &adam(lr))?;

    // (c) dual ascent on the budget
    if matches!(cfg.objective, Objective::Full | Objective::DisableAux) {
        st.budget = st.budget.dual_update(kl);
    }
    st.recon_mean = Some(match st.recon_mean {
        None => recon,
        Some(m) => RECON_EMA * m + (1.0 - RECON_EMA) * recon,
    });
    let rec = TrainLogRecord {
        epoch: st.epoch,
        iteration: st.iteration,
        recon_mse: recon,
        kl_nats: kl,
        aux_mse,
        gamma_kl: st.budget.gamma_kl,
        lr,
    };
    st.iteration += 1;
    Ok(rec)
}

fn append_log(path: &Path, records: &[TrainLogRecord], fresh: bool) -> Result<()> {
    let mut text = if fresh || !path.exists() {
        String::new()
    } else {
        crate::fsutil::read_to_string(path)?
    };
    for r in records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

/// Reads a JSON-lines training log.
pub fn read_log(path: &Path) -> Result<Vec<TrainLogRecord>> {
    crate::fsutil::read_to_string(path)?
        .lines()
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Format {
                record: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Continues training `st` until `cfg.epochs` epochs are complete.
pub fn run_epochs(mut st: TrainState, data: &[PoseSequence], cfg: &TrainConfig, out: &TrainOutputs) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_data(data, cfg)?;
    if data.is_empty() && st.epoch < cfg.epochs {
        return Err(Error::contract("empty training set"));
    }
    let mut log = Vec::new();
    let mut last_good: Option<PathBuf> = None;
    let fresh_log = st.epoch == 0;
    if let (Some(p), true) = (&out.log_path, fresh_log) {
        append_log(p, &[], true)?;
    }
    while st.epoch < cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, st.epoch as u64));
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let lr = cfg.lr_at(st.epoch);
        let mut epoch_log = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PoseSequence> = chunk.iter().map(|&i| &data[i]).collect();
            match train_step(&mut st, &batch, cfg, lr, &mut rng) {
                Ok(r) => epoch_log.push(r),
                Err(Error::Diverged { epoch, iteration, .. }) => {
                    return Err(Error::Diverged {
                        epoch,
                        iteration,
                        last_good,
                    })
                }
                Err(e) => return Err(e),
            }
        }
        st.epoch += 1;
        if let Some(p) = &out.log_path {
            append_log(p, &epoch_log, false)?;
        }
        if let Some(dir) = &out.checkpoint_dir {
            let mut ckpt = st.to_checkpoint(cfg);
            if let Some(stats) = &out.stats {
                ckpt.manifest["norm_stats"] = serde_json::to_value(stats)?;
            }
            let path = dir.join("last.ckpt");
            ckpt.save(&path)?;
            if out.keep_every_epoch {
                ckpt.save(&dir.join(format!("epoch-{:03}.ckpt", st.epoch)))?;
            }
            last_good = Some(path);
        }
        log.extend(epoch_log);
    }
    Ok(TrainOutcome { state: st, log })
}

/// Trains a behavior model from scratch on normalized sequences.
pub fn train_vae(data: &[PoseSequence], cfg: &TrainConfig, out: &TrainOutputs) -> Result<TrainOutcome> {
    run_epochs(TrainState::new(cfg)?, data, cfg, out)
}

/// Continues a run from a checkpoint until `cfg.epochs`.
pub fn resume(checkpoint: &Path, data: &[PoseSequence], cfg: &TrainConfig, out: &TrainOutputs) -> Result<TrainOutcome> {
    let c = Checkpoint::load(checkpoint)?;
    let st = TrainState::from_checkpoint(&c, cfg)?;
    run_epochs(st, data, cfg, out)
}

/// Posterior means of `data` as `[N, D]`.
pub fn posterior_means(model: &BehaviorModel, data: &[PoseSequence]) -> Result<Tensor> {
    let codes = model.encode_all(data)?;
    let d = model.config.latent;
    Tensor::new(vec![codes.len(), d], codes.into_iter().flat_map(|c| c.mu).collect())
}
