//! Quantitative protocols: transfer metrics (TDE, d_β, RE), action
//! classification, sampling diversity (ASD/FSD), realism classification and
//! nearest-neighbor retrieval, plus the aggregated metric report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{derive_seed, family_index, NormStats, PoseSequence};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::model::{time_major, BehaviorModel};
use crate::nn::{gru_step_projected, init_gru, init_linear, init_lstm, linear, linear_named, lstm_input_projection, lstm_step_projected, mlp_spec, Activation, LstmState, MlpSpec};
use crate::optim::{adam_step, AdamConfig, AdamState, SgdMomentum};
use crate::params::{ParamSet, Role};
use crate::skeleton::PELVIS;
use crate::synth::Family;
use crate::tensor::Tensor;

/// Frame indices (1-based, generated frames) at which transfer metrics are reported.
pub const EVAL_STEPS: [usize; 6] = [1, 10, 20, 30, 40, 50];

fn check_same_shape(a: &PoseSequence, b: &PoseSequence) -> Result<()> {
    if a.frames() != b.frames() || a.joints() != b.joints() {
        return Err(Error::contract(format!(
            "sequences `{}` ({}×{}) and `{}` ({}×{}) differ in shape",
            a.id,
            a.frames(),
            a.joints(),
            b.id,
            b.frames(),
            b.joints()
        )));
    }
    Ok(())
}

/// Total displacement error at frame `t` (1-based): mean squared difference
/// over the K·3 coordinates of that frame.
pub fn tde(x_beta: &PoseSequence, x_r: &PoseSequence, t: usize) -> Result<f64> {
    check_same_shape(x_beta, x_r)?;
    if t < 1 || t > x_beta.frames() {
        return Err(Error::contract(format!("T = {t} outside 1..={}", x_beta.frames())));
    }
    let (a, b) = (x_beta.frame(t - 1), x_r.frame(t - 1));
    Ok(a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / a.len() as f64)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
}

/// Euclidean distance between the posterior means of two sequences.
pub fn d_beta(model: &BehaviorModel, x_beta: &PoseSequence, x_r: &PoseSequence) -> Result<f64> {
    let codes = model.encode_batch(&[x_beta, x_r])?;
    Ok(euclid(&codes[0].mu, &codes[1].mu))
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: 0.0, std: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

/// Seeded 80/20-style split of `0..n` into (train, held-out) index sets.
fn split_indices(n: usize, ratio: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = if n < 2 { n } else { ((n as f64 * ratio).round() as usize).clamp(1, n - 1) };
    let held = idx.split_off(cut);
    (idx, held)
}

fn select_rows(t: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let c = t.cols();
    Tensor::new(vec![rows.len(), c], rows.iter().flat_map(|&r| t.row(r).to_vec()).collect())
}

// ---------------------------------------------------------------- RE

/// Training setup of the posture regressor used for RE.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressorConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Fraction of the codes used for fitting; the rest measures RE.
    pub split: f64,
    pub seed: u64,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            hidden: vec![512, 256],
            epochs: 20,
            batch_size: 32,
            lr: 1e-3,
            split: 0.8,
            seed: 0,
        }
    }
}

/// MLP from behavior codes to a single posture.
#[derive(Clone, Debug, PartialEq)]
pub struct Regressor {
    pub spec: MlpSpec,
    pub params: ParamSet,
}

impl Regressor {
    pub fn predict(&self, codes: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(codes.clone());
        let y = mlp_spec(&mut g, x, &p, "mlp", &self.spec)?;
        Ok(g.value(y).clone())
    }

    /// Mean squared error of the predictions against `targets`.
    pub fn mse(&self, codes: &Tensor, targets: &Tensor) -> Result<f64> {
        let out = self.spec.widths.last().copied().unwrap_or(0);
        if targets.cols() != out || targets.rows() != codes.rows() {
            return Err(Error::contract(format!(
                "regressor predicts {out}-wide postures, targets are {:?}",
                targets.shape()
            )));
        }
        let pred = self.predict(codes)?;
        Ok(pred.data().iter().zip(targets.data()).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / pred.len() as f64)
    }
}

/// Fits a posture regressor `codes [N, D] → targets [N, W]` with Adam.
pub fn train_regressor(codes: &Tensor, targets: &Tensor, cfg: &RegressorConfig) -> Result<Regressor> {
    if codes.rows() != targets.rows() || codes.rows() == 0 {
        return Err(Error::contract("regressor needs one non-empty target row per code"));
    }
    let mut widths = vec![codes.cols()];
    widths.extend(&cfg.hidden);
    widths.push(targets.cols());
    let spec = MlpSpec::new(widths, Activation::Relu);
    let mut params = ParamSet::new(Role::MetricAux);
    spec.init(&mut params, "mlp", &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let mut adam = AdamState::new(&params);
    let acfg = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..codes.rows()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64)));
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut g = Graph::new();
            let p = params.bind(&mut g, true);
            let x = g.constant(select_rows(codes, chunk)?);
            let t = g.constant(select_rows(targets, chunk)?);
            let y = mlp_spec(&mut g, x, &p, "mlp", &spec)?;
            let l = crate::nn::gaussian_recon_nll(&mut g, y, t)?;
            let grads = g.backward(l)?;
            let gr = p.grads(&grads, &params);
            adam_step(&mut params, &gr, &mut adam, &acfg)?;
        }
    }
    Ok(Regressor { spec, params })
}

/// `[N, W]` matrix of frame `t` (1-based) of every sequence.
pub fn frame_targets(seqs: &[PoseSequence], t: usize) -> Result<Tensor> {
    let first = seqs.first().ok_or_else(|| Error::contract("no sequences"))?;
    if t < 1 || t > first.frames() {
        return Err(Error::contract(format!("T = {t} outside 1..={}", first.frames())));
    }
    let w = first.frame_width();
    Tensor::new(vec![seqs.len(), w], seqs.iter().flat_map(|s| s.frame(t - 1).to_vec()).collect())
}

/// Regression error at frame `t`: a fresh regressor is fit on a split of
/// (codes, frame-t postures) and evaluated on the held-out remainder.
pub fn regression_error(codes: &Tensor, seqs: &[PoseSequence], t: usize, cfg: &RegressorConfig) -> Result<f64> {
    if codes.rows() != seqs.len() || seqs.len() < 2 {
        return Err(Error::contract("RE needs at least two sequences with one code each"));
    }
    let targets = frame_targets(seqs, t)?;
    let (fit, held) = split_indices(seqs.len(), cfg.split, derive_seed(cfg.seed, 0x5245));
    let reg = train_regressor(&select_rows(codes, &fit)?, &select_rows(&targets, &fit)?, cfg)?;
    reg.mse(&select_rows(codes, &held)?, &select_rows(&targets, &held)?)
}

// ---------------------------------------------------------------- action classification

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            lr: 1e-2,
            seed: 0,
        }
    }
}

fn labels_of(seqs: &[PoseSequence]) -> Result<Vec<usize>> {
    seqs.iter().map(family_index).collect()
}

fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let hits = labels
        .iter()
        .enumerate()
        .filter(|(r, &l)| {
            let row = logits.row(*r);
            let best = (0..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b });
            best == l
        })
        .count();
    hits as f64 / labels.len().max(1) as f64
}

/// Linear softmax classifier on fixed features; returns held-out accuracy.
/// Features are standardized with the training statistics (an affine change
/// that leaves the linear model class unchanged but conditions the fit).
pub fn linear_probe(train_x: &Tensor, train_y: &[usize], test_x: &Tensor, test_y: &[usize], classes: usize, cfg: &ProbeConfig) -> Result<f64> {
    if train_x.rows() != train_y.len() || test_x.rows() != test_y.len() || train_y.is_empty() || test_y.is_empty() {
        return Err(Error::contract("probe features and labels must be non-empty and aligned"));
    }
    let d = train_x.cols();
    let n = train_x.rows() as f64;
    let mean: Vec<f64> = (0..d).map(|j| (0..train_x.rows()).map(|r| train_x.row(r)[j]).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..d)
        .map(|j| ((0..train_x.rows()).map(|r| (train_x.row(r)[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt().max(1e-8))
        .collect();
    let standardize = |t: &Tensor| {
        let data = (0..t.rows()).flat_map(|r| (0..d).map(move |j| (r, j))).map(|(r, j)| (t.row(r)[j] - mean[j]) / std[j]).collect();
        Tensor::new(vec![t.rows(), d], data)
    };
    let (tx, vx) = (standardize(train_x)?, standardize(test_x)?);
    let mut params = ParamSet::new(Role::MetricAux);
    init_linear(&mut params, "head", d, classes, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let mut adam = AdamState::new(&params);
    let acfg = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    for _ in 0..cfg.epochs {
        let mut g = Graph::new();
        let p = params.bind(&mut g, true);
        let x = g.constant(tx.clone());
        let y = linear_named(&mut g, x, &p, "head")?;
        let l = g.softmax_xent(y, train_y)?;
        let grads = g.backward(l)?;
        let gr = p.grads(&grads, &params);
        adam_step(&mut params, &gr, &mut adam, &acfg)?;
    }
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let x = g.constant(vx);
    let y = linear_named(&mut g, x, &p, "head")?;
    Ok(accuracy(g.value(y), test_y))
}

/// Frozen-encoder linear probe: trains on the posterior means of `train`
/// and reports accuracy on `test`.
pub fn action_probe(model: &dyn TransferModel, train: &[PoseSequence], test: &[PoseSequence], cfg: &ProbeConfig) -> Result<f64> {
    let (ty, vy) = (labels_of(train)?, labels_of(test)?);
    let tx = model.encode_means(train)?;
    let vx = model.encode_means(test)?;
    linear_probe(&tx, &ty, &vx, &vy, Family::ALL.len(), cfg)
}

/// Recurrent sequence classifier trained end to end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeqClassifierConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for SeqClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            epochs: 15,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// Final LSTM hidden state over a time-major block.
fn lstm_features(g: &mut Graph, p: &crate::params::Bound, x_tm: Var, steps: usize, batch: usize, hidden: usize) -> Result<Var> {
    let gx_all = lstm_input_projection(g, x_tm, p, "lstm")?;
    let mut st = LstmState {
        h: g.constant(Tensor::zeros(&[batch, hidden])),
        c: g.constant(Tensor::zeros(&[batch, hidden])),
    };
    for t in 0..steps {
        let gx = g.slice_rows(gx_all, t * batch, batch)?;
        st = lstm_step_projected(g, gx, st, p, "lstm")?;
    }
    Ok(st.h)
}

/// Upper bound for the action probe: an LSTM with the encoder's architecture
/// plus a linear head, trained end to end on `train`; returns accuracy on `test`.
pub fn action_upper_bound(train: &[PoseSequence], test: &[PoseSequence], cfg: &SeqClassifierConfig) -> Result<f64> {
    let (ty, vy) = (labels_of(train)?, labels_of(test)?);
    let first = train.first().ok_or_else(|| Error::contract("empty training set"))?;
    let (steps, w, h) = (first.frames(), first.frame_width(), cfg.hidden);
    let classes = Family::ALL.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ParamSet::new(Role::MetricAux);
    init_lstm(&mut params, "lstm", w, h, &mut rng)?;
    init_linear(&mut params, "head", h, classes, &mut rng)?;
    let mut adam = AdamState::new(&params);
    let acfg = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64)));
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<&PoseSequence> = chunk.iter().map(|&i| &train[i]).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| ty[i]).collect();
            let mut g = Graph::new();
            let p = params.bind(&mut g, true);
            let x = g.constant(time_major(&batch)?);
            let f = lstm_features(&mut g, &p, x, steps, batch.len(), h)?;
            let y = linear_named(&mut g, f, &p, "head")?;
            let l = g.softmax_xent(y, &labels)?;
            let grads = g.backward(l)?;
            let gr = p.grads(&grads, &params);
            adam_step(&mut params, &gr, &mut adam, &acfg)?;
        }
    }
    let mut hits = 0.0;
    for chunk in (0..test.len()).collect::<Vec<_>>().chunks(64) {
        let batch: Vec<&PoseSequence> = chunk.iter().map(|&i| &test[i]).collect();
        let labels: Vec<usize> = chunk.iter().map(|&i| vy[i]).collect();
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let x = g.constant(time_major(&batch)?);
        let f = lstm_features(&mut g, &p, x, steps, batch.len(), h)?;
        let y = linear_named(&mut g, f, &p, "head")?;
        hits += accuracy(g.value(y), &labels) * labels.len() as f64;
    }
    Ok(hits / test.len().max(1) as f64)
}

// ---------------------------------------------------------------- diversity

fn check_samples(samples: &[PoseSequence]) -> Result<()> {
    if samples.len() < 2 {
        return Err(Error::contract("diversity metrics need at least two samples"));
    }
    samples.windows(2).try_for_each(|w| check_same_shape(&w[0], &w[1]))
}

/// Index of each sample's nearest other sample (flattened Euclidean distance)
/// and that distance; ties go to the lowest index.
fn nearest_others(samples: &[PoseSequence]) -> Vec<(usize, f64)> {
    (0..samples.len())
        .map(|i| {
            let mut best = (usize::MAX, f64::INFINITY);
            for j in 0..samples.len() {
                if j != i {
                    let d = euclid(samples[i].data(), samples[j].data());
                    if d < best.1 {
                        best = (j, d);
                    }
                }
            }
            best
        })
        .collect()
}

/// Average self distance: mean distance from each sample to its nearest other sample.
pub fn asd(samples: &[PoseSequence]) -> Result<f64> {
    check_samples(samples)?;
    let nn = nearest_others(samples);
    Ok(nn.iter().map(|&(_, d)| d).sum::<f64>() / nn.len() as f64)
}

/// Final self distance: mean distance between each sample's last posture and
/// the last posture of its full-sequence nearest neighbor.
pub fn fsd(samples: &[PoseSequence]) -> Result<f64> {
    check_samples(samples)?;
    let nn = nearest_others(samples);
    Ok(nn
        .iter()
        .enumerate()
        .map(|(i, &(j, _))| euclid(samples[i].last_frame(), samples[j].last_frame()))
        .sum::<f64>()
        / nn.len() as f64)
}

// ---------------------------------------------------------------- realism

/// Desk-scale realism classifier (single-layer GRU → linear → sigmoid), SGD with momentum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RealityConfig {
    pub hidden: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub split: f64,
    pub seed: u64,
}

impl Default for RealityConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            iterations: 300,
            batch_size: 64,
            lr: 0.05,
            momentum: 0.9,
            split: 0.8,
            seed: 0,
        }
    }
}

/// Time-major `[steps·B, 2W]` block of positions and frame-to-frame velocities
/// (zero at the first frame).
fn with_velocity(batch: &[&PoseSequence]) -> Result<Tensor> {
    let pos = time_major(batch)?;
    let (b, w) = (batch.len(), pos.cols());
    let mut data = Vec::with_capacity(pos.len() * 2);
    for r in 0..pos.rows() {
        data.extend_from_slice(pos.row(r));
        if r < b {
            data.extend(std::iter::repeat(0.0).take(w));
        } else {
            data.extend(pos.row(r).iter().zip(pos.row(r - b)).map(|(p, q)| p - q));
        }
    }
    Tensor::new(vec![pos.rows(), 2 * w], data)
}

fn gru_logits(g: &mut Graph, p: &crate::params::Bound, batch: &[&PoseSequence], hidden: usize) -> Result<Var> {
    let steps = batch[0].frames();
    let x = g.constant(with_velocity(batch)?);
    let w = p.get("gru.w_ih")?;
    let b = p.get("gru.b_ih")?;
    let gx_all = linear(g, x, w, b)?;
    let mut h = g.constant(Tensor::zeros(&[batch.len(), hidden]));
    for t in 0..steps {
        let gx = g.slice_rows(gx_all, t * batch.len(), batch.len())?;
        h = gru_step_projected(g, gx, h, p, "gru")?;
    }
    linear_named(g, h, p, "head")
}

/// Trains a real-vs-generated classifier on a balanced split and returns its
/// held-out accuracy (0.5 = indistinguishable). Classes are truncated to the
/// smaller count to stay balanced.
pub fn reality_classifier(real: &[PoseSequence], generated: &[PoseSequence], cfg: &RealityConfig) -> Result<f64> {
    if real.is_empty() || generated.is_empty() {
        return Err(Error::contract("realism classification needs both real and generated sequences"));
    }
    let n = real.len().min(generated.len());
    let pool: Vec<(&PoseSequence, f64)> = real[..n].iter().map(|s| (s, 1.0)).chain(generated[..n].iter().map(|s| (s, 0.0))).collect();
    pool.windows(2).try_for_each(|w| check_same_shape(w[0].0, w[1].0))?;
    // Both classes share one split: generated[i] is often derived from
    // real[i], and the pair must not straddle the train/held-out boundary.
    let (fit, rest) = split_indices(n, cfg.split, derive_seed(cfg.seed, 1));
    let train: Vec<usize> = fit.iter().copied().chain(fit.iter().map(|i| i + n)).collect();
    let held: Vec<usize> = rest.iter().copied().chain(rest.iter().map(|i| i + n)).collect();

    let (w, h) = (real[0].frame_width(), cfg.hidden);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ParamSet::new(Role::MetricAux);
    init_gru(&mut params, "gru", 2 * w, h, &mut rng)?;
    init_linear(&mut params, "head", h, 1, &mut rng)?;
    let mut opt = SgdMomentum::new(cfg.lr, cfg.momentum);
    let mut order: Vec<usize> = Vec::new();
    let mut epoch = 0u64;
    for _ in 0..cfg.iterations {
        if order.len() < cfg.batch_size.min(train.len()) {
            let mut more = train.clone();
            more.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed ^ 0x7265, epoch)));
            epoch += 1;
            order.extend(more);
        }
        let take = cfg.batch_size.min(train.len());
        let chunk: Vec<usize> = order.drain(..take).collect();
        let batch: Vec<&PoseSequence> = chunk.iter().map(|&i| pool[i].0).collect();
        let targets: Vec<f64> = chunk.iter().map(|&i| pool[i].1).collect();
        let mut g = Graph::new();
        let p = params.bind(&mut g, true);
        let y = gru_logits(&mut g, &p, &batch, h)?;
        let l = g.bce_logits(y, &targets)?;
        let grads = g.backward(l)?;
        let gr = p.grads(&grads, &params);
        opt.step(&mut params, &gr)?;
    }
    let mut hits = 0usize;
    for chunk in held.chunks(128) {
        let batch: Vec<&PoseSequence> = chunk.iter().map(|&i| pool[i].0).collect();
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let y = gru_logits(&mut g, &p, &batch, h)?;
        hits += g
            .value(y)
            .data()
            .iter()
            .zip(chunk)
            .filter(|(&logit, &i)| (logit > 0.0) == (pool[i].1 > 0.5))
            .count();
    }
    Ok(hits as f64 / held.len() as f64)
}

// ---------------------------------------------------------------- nearest neighbors

/// Distance used to rank a corpus against a query (inputs in world coordinates).
#[derive(Clone, Copy, Debug)]
pub enum NnMetric<'a> {
    /// Distance between posterior means (sequences are normalized with `stats` first).
    Latent(&'a BehaviorModel, &'a NormStats),
    /// Mean per-frame Euclidean distance of pelvis-aligned postures.
    Posture,
}

/// Subtracts the pelvis position from every joint of every frame.
pub fn pelvis_aligned(seq: &PoseSequence) -> Vec<f64> {
    let k = seq.joints();
    let mut out = seq.data().to_vec();
    for f in 0..seq.frames() {
        let p = seq.joint(f, PELVIS);
        for j in 0..k {
            for c in 0..3 {
                out[(f * k + j) * 3 + c] -= p[c];
            }
        }
    }
    out
}

/// Mean over frames of the Euclidean distance between pelvis-aligned postures.
pub fn posture_distance(a: &PoseSequence, b: &PoseSequence) -> Result<f64> {
    check_same_shape(a, b)?;
    let (pa, pb) = (pelvis_aligned(a), pelvis_aligned(b));
    let w = a.frame_width();
    Ok((0..a.frames()).map(|f| euclid(&pa[f * w..(f + 1) * w], &pb[f * w..(f + 1) * w])).sum::<f64>() / a.frames() as f64)
}

/// Corpus ids ranked by increasing distance to `query` (stable for ties).
pub fn nearest_neighbors(query: &PoseSequence, corpus: &[PoseSequence], metric: NnMetric<'_>) -> Result<Vec<(String, f64)>> {
    if corpus.is_empty() {
        return Err(Error::contract("nearest-neighbor search over an empty corpus"));
    }
    let dists: Vec<f64> = match metric {
        NnMetric::Posture => corpus.iter().map(|c| posture_distance(query, c)).collect::<Result<_>>()?,
        NnMetric::Latent(model, stats) => {
            let q = model.encode(&stats.normalize(query)?)?;
            let normalized: Vec<PoseSequence> = corpus.iter().map(|c| stats.normalize(c)).collect::<Result<_>>()?;
            let codes = model.encode_all(&normalized)?;
            codes.iter().map(|c| euclid(&q.mu, &c.mu)).collect()
        }
    };
    let mut ranked: Vec<(String, f64)> = corpus.iter().map(|c| c.id.clone()).zip(dists).collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
    Ok(ranked)
}

// ---------------------------------------------------------------- transfer evaluation

/// Settings of the transfer protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferEvalConfig {
    pub pair_count: usize,
    pub seed: u64,
    pub steps: Vec<usize>,
    pub regressor: RegressorConfig,
    pub probe: ProbeConfig,
    /// Compute RE (one regressor per step); the costliest part.
    pub with_re: bool,
    /// Compute the frozen-encoder action probe (needs labeled data).
    pub with_action: bool,
}

impl Default for TransferEvalConfig {
    fn default() -> Self {
        Self {
            pair_count: 100,
            seed: 0,
            steps: EVAL_STEPS.to_vec(),
            regressor: RegressorConfig::default(),
            probe: ProbeConfig::default(),
            with_re: true,
            with_action: true,
        }
    }
}

/// One model's row of the transfer table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferEval {
    pub model: String,
    pub pairs: usize,
    pub tde: BTreeMap<usize, MeanStd>,
    pub re: BTreeMap<usize, f64>,
    pub d_beta: MeanStd,
    pub action_accuracy: Option<f64>,
}

/// Source/target index pairs: each target comes from a different sequence.
pub fn sample_pairs(count: usize, len: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    if len < 2 {
        return Err(Error::contract("transfer pairs need at least two test sequences"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x7061));
    Ok((0..count)
        .map(|_| {
            let s = rng.gen_range(0..len);
            let mut t = rng.gen_range(0..len - 1);
            if t >= s {
                t += 1;
            }
            (s, t)
        })
        .collect())
}

/// What the transfer protocol needs from a model: re-enactment from a target
/// posture and posterior-mean encodings.
pub trait TransferModel {
    fn transfer_many(&self, sources: &[&PoseSequence], targets: &[Vec<f64>]) -> Result<Vec<PoseSequence>>;
    /// `[N, D]` posterior means.
    fn encode_means(&self, seqs: &[PoseSequence]) -> Result<Tensor>;
}

impl TransferModel for BehaviorModel {
    fn transfer_many(&self, sources: &[&PoseSequence], targets: &[Vec<f64>]) -> Result<Vec<PoseSequence>> {
        let mut out = Vec::with_capacity(sources.len());
        for (src, tgt) in sources.chunks(64).zip(targets.chunks(64)) {
            out.extend(self.transfer_batch(src, tgt)?);
        }
        Ok(out)
    }

    fn encode_means(&self, seqs: &[PoseSequence]) -> Result<Tensor> {
        crate::train::posterior_means(self, seqs)
    }
}

/// Runs the transfer protocol for every model on normalized `test` data
/// (and `train` for the action probe). All models see the same pairs.
pub fn run_transfer_eval(models: &[(&str, &dyn TransferModel)], train: &[PoseSequence], test: &[PoseSequence], cfg: &TransferEvalConfig) -> Result<Vec<TransferEval>> {
    let pairs = sample_pairs(cfg.pair_count, test.len(), cfg.seed)?;
    let n = test[0].frames();
    let steps: Vec<usize> = cfg.steps.iter().copied().filter(|&t| t >= 1 && t <= n).collect();
    let sources: Vec<&PoseSequence> = pairs.iter().map(|&(s, _)| &test[s]).collect();
    let owned_sources: Vec<PoseSequence> = sources.iter().map(|s| (*s).clone()).collect();
    let targets: Vec<Vec<f64>> = pairs.iter().map(|&(_, t)| test[t].first_frame().to_vec()).collect();
    let mut out = Vec::with_capacity(models.len());
    for &(name, model) in models {
        let transfers = model.transfer_many(&sources, &targets)?;
        let mut tde_map = BTreeMap::new();
        for &t in &steps {
            let vals: Vec<f64> = sources.iter().zip(&transfers).map(|(s, r)| tde(s, r, t)).collect::<Result<_>>()?;
            tde_map.insert(t, MeanStd::of(&vals));
        }
        let src_codes = model.encode_means(&owned_sources)?;
        let rec_codes = model.encode_means(&transfers)?;
        let d: Vec<f64> = (0..pairs.len()).map(|i| euclid(src_codes.row(i), rec_codes.row(i))).collect();
        let mut re = BTreeMap::new();
        if cfg.with_re {
            let codes = model.encode_means(test)?;
            for &t in &steps {
                re.insert(t, regression_error(&codes, test, t, &cfg.regressor)?);
            }
        }
        let action_accuracy = if cfg.with_action {
            Some(action_probe(model, train, test, &cfg.probe)?)
        } else {
            None
        };
        out.push(TransferEval {
            model: name.to_string(),
            pairs: pairs.len(),
            tde: tde_map,
            re,
            d_beta: MeanStd::of(&d),
            action_accuracy,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------- generation helpers

/// Realism table: held-out accuracy per synthesis type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealismEval {
    pub real_count: usize,
    pub generated_count: usize,
    pub classifier: RealityConfig,
    pub accuracy: BTreeMap<String, f64>,
}

/// Diversity of sample sets per code source and set size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityRow {
    pub source: String,
    pub samples: usize,
    pub asd: f64,
    pub fsd: f64,
}

/// Generations of the four realism types for the given real sequences:
/// `self` (own first frame), `transfer` (a different sequence's first frame),
/// `prior` and `flow` (sampled codes decoded from real first frames).
pub fn realism_generations(model: &BehaviorModel, flow: Option<&crate::flow::FlowModel>, real: &[PoseSequence], seed: u64) -> Result<BTreeMap<String, Vec<PoseSequence>>> {
    let n = model.config.frames;
    let mut out = BTreeMap::new();
    let refs: Vec<&PoseSequence> = real.iter().collect();
    let firsts: Vec<Vec<f64>> = real.iter().map(|s| s.first_frame().to_vec()).collect();
    let mut selfs = Vec::new();
    for (src, tgt) in refs.chunks(64).zip(firsts.chunks(64)) {
        selfs.extend(model.transfer_batch(src, tgt)?);
    }
    out.insert("self".to_string(), selfs);
    let pairs = sample_pairs(real.len(), real.len(), seed)?;
    let mut transfers = Vec::new();
    for chunk in pairs.chunks(64) {
        let src: Vec<&PoseSequence> = chunk.iter().map(|&(s, _)| &real[s]).collect();
        let tgt: Vec<Vec<f64>> = chunk.iter().map(|&(_, t)| firsts[t].clone()).collect();
        transfers.extend(model.transfer_batch(&src, &tgt)?);
    }
    out.insert("transfer".to_string(), transfers);
    let mut sources = vec![("prior", crate::flow::CodeSource::Prior)];
    if let Some(f) = flow {
        sources.push(("flow", crate::flow::CodeSource::Flow(f)));
    }
    for (label, source) in sources {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x6765));
        let mut seqs = Vec::with_capacity(real.len());
        for chunk in firsts.chunks(64) {
            let zs: Vec<Vec<f64>> = chunk.iter().map(|_| source.draw(&mut rng, model.config.latent)).collect::<Result<_>>()?;
            seqs.extend(model.decode_batch(&zs, chunk, n)?);
        }
        out.insert(label.to_string(), seqs);
    }
    Ok(out)
}

/// `count` sampled behaviors decoded from the same start posture.
pub fn sample_set(model: &BehaviorModel, source: crate::flow::CodeSource<'_>, x_t: &[f64], count: usize, seed: u64) -> Result<Vec<PoseSequence>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zs: Vec<Vec<f64>> = (0..count).map(|_| source.draw(&mut rng, model.config.latent)).collect::<Result<_>>()?;
    let starts = vec![x_t.to_vec(); count];
    model.decode_batch(&zs, &starts, model.config.frames)
}

/// Settings of the sampling-diversity protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiversityEvalConfig {
    /// Sizes of the sample sets drawn per start posture.
    pub set_sizes: Vec<usize>,
    /// Number of start postures (first frames of the first sequences given).
    pub starts: usize,
    pub seed: u64,
}

impl Default for DiversityEvalConfig {
    fn default() -> Self {
        Self {
            set_sizes: vec![10, 50],
            starts: 10,
            seed: 0,
        }
    }
}

/// ASD/FSD of sampled sets per code source (`prior`, and `flow` when given)
/// and set size, averaged over start postures taken from `starts`.
pub fn run_diversity_eval(model: &BehaviorModel, flow: Option<&crate::flow::FlowModel>, starts: &[PoseSequence], cfg: &DiversityEvalConfig) -> Result<Vec<DiversityRow>> {
    let k = cfg.starts.min(starts.len());
    if k == 0 {
        return Err(Error::contract("diversity evaluation needs at least one start posture"));
    }
    let mut sources = vec![("prior", crate::flow::CodeSource::Prior)];
    if let Some(f) = flow {
        sources.push(("flow", crate::flow::CodeSource::Flow(f)));
    }
    let mut rows = Vec::new();
    for (label, source) in sources {
        for &size in &cfg.set_sizes {
            let (mut a, mut f) = (0.0, 0.0);
            for (i, start) in starts[..k].iter().enumerate() {
                let set = sample_set(model, source, start.first_frame(), size, derive_seed(cfg.seed, (i * 1_000_003 + size) as u64))?;
                a += asd(&set)?;
                f += fsd(&set)?;
            }
            rows.push(DiversityRow {
                source: label.to_string(),
                samples: size,
                asd: a / k as f64,
                fsd: f / k as f64,
            });
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------- report

/// Everything an evaluation run produced, serializable as JSON or text tables.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub settings: serde_json::Value,
    pub transfer: Vec<TransferEval>,
    pub action_upper_bound: Option<f64>,
    pub realism: Option<RealismEval>,
    pub diversity: Vec<DiversityRow>,
}

impl MetricReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Aligned plain-text tables (transfer, realism, diversity).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if !self.transfer.is_empty() {
            let steps: Vec<usize> = self.transfer[0].tde.keys().copied().collect();
            out.push_str("Transfer analysis\n");
            let _ = write!(out, "{:<14}", "model");
            for t in &steps {
                let _ = write!(out, " {:>9}", format!("TDE@{t}"));
            }
            for t in &steps {
                let _ = write!(out, " {:>9}", format!("RE@{t}"));
            }
            let _ = writeln!(out, " {:>15} {:>6}", "d_beta", "acc");
            for row in &self.transfer {
                let _ = write!(out, "{:<14}", row.model);
                for t in &steps {
                    let _ = write!(out, " {:>9.4}", row.tde.get(t).map(|m| m.mean).unwrap_or(f64::NAN));
                }
                for t in &steps {
                    match row.re.get(t) {
                        Some(v) => {
                            let _ = write!(out, " {v:>9.4}");
                        }
                        None => {
                            let _ = write!(out, " {:>9}", "-");
                        }
                    }
                }
                let db = format!("{:.3} ± {:.3}", row.d_beta.mean, row.d_beta.std);
                let acc = row.action_accuracy.map(|a| format!("{a:.3}")).unwrap_or_else(|| "-".into());
                let _ = writeln!(out, " {db:>15} {acc:>6}");
            }
            if let Some(ub) = self.action_upper_bound {
                let _ = writeln!(out, "{:<14} end-to-end action classifier accuracy {ub:.3}", "gt");
            }
            out.push('\n');
        }
        if let Some(r) = &self.realism {
            let _ = writeln!(
                out,
                "Realism (classifier accuracy; {} real vs {} generated, {} iterations)",
                r.real_count, r.generated_count, r.classifier.iterations
            );
            for (k, v) in &r.accuracy {
                let _ = writeln!(out, "{k:<10} {v:>6.3}");
            }
            out.push('\n');
        }
        if !self.diversity.is_empty() {
            out.push_str("Sampling diversity\n");
            let _ = writeln!(out, "{:<10} {:>5} {:>9} {:>9}", "source", "N", "ASD", "FSD");
            for d in &self.diversity {
                let _ = writeln!(out, "{:<10} {:>5} {:>9.4} {:>9.4}", d.source, d.samples, d.asd, d.fsd);
            }
        }
        out
    }
}
