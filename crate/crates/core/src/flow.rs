//! Normalizing flow between behavior codes and a standard-normal base
//! density: stacked blocks of actnorm → affine coupling → fixed shuffle,
//! with exact log-determinants, density training and sampling.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{derive_seed, PoseSequence};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::model::BehaviorModel;
use crate::nn::{init_linear, init_linear_zero, linear_named, standard_normal};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::params::{Bound, ParamSet, Role};
use crate::tensor::Tensor;

/// Floor applied to the per-dimension std during actnorm initialization.
pub const ACTNORM_STD_FLOOR: f64 = 1e-6;
const LOG_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub latent: usize,
    pub blocks: usize,
    /// Seed of the parameter initialization and of the shuffles.
    pub seed: u64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            latent: 64,
            blocks: 6,
            seed: 0,
        }
    }
}

/// A stack of invertible blocks. Parameters of block `k` are named
/// `bKK.an.s`, `bKK.an.b` (actnorm), `bKK.c0.*`, `bKK.c1.*` (coupling subnet)
/// and `bKK.bound` (scale bound).
#[derive(Clone, Debug, PartialEq)]
pub struct FlowModel {
    pub config: FlowConfig,
    pub params: ParamSet,
    perms: Vec<Vec<usize>>,
    initialized: bool,
}

fn name(k: usize, part: &str) -> String {
    format!("b{k:02}.{part}")
}

/// Even coordinates condition the coupling; odd coordinates are transformed.
fn halves(d: usize) -> (Vec<usize>, Vec<usize>) {
    ((0..d).step_by(2).collect(), (1..d).step_by(2).collect())
}

/// Inverse of the permutation `[even.., odd..]`.
fn merge_index(d: usize) -> Vec<usize> {
    let (even, odd) = halves(d);
    let order: Vec<usize> = even.into_iter().chain(odd).collect();
    let mut inv = vec![0; d];
    for (pos, &src) in order.iter().enumerate() {
        inv[src] = pos;
    }
    inv
}

/// Output of a forward pass on the tape.
pub struct FlowGraph {
    /// `[B, D]` base-space values.
    pub u: Var,
    /// `[B]` per-row log-determinant of the couplings.
    pub logdet_rows: Var,
    /// Scalar log-determinant shared by every row (actnorm terms); `None`
    /// for an empty flow.
    pub logdet_shared: Option<Var>,
}

impl FlowModel {
    /// A flow whose actnorm layers still await data-dependent initialization.
    /// Every block starts as the identity (unit actnorm, zero final coupling layer).
    pub fn new(config: FlowConfig) -> Result<Self> {
        let d = config.latent;
        if d < 2 {
            return Err(Error::contract("flow dimensionality must be at least 2"));
        }
        let (even, odd) = halves(d);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new(Role::Flow);
        let mut perms = Vec::with_capacity(config.blocks);
        for k in 0..config.blocks {
            params.insert(name(k, "an.s"), Tensor::full(&[d], 1.0))?;
            params.insert(name(k, "an.b"), Tensor::zeros(&[d]))?;
            init_linear(&mut params, &name(k, "c0"), even.len(), d, &mut rng)?;
            init_linear_zero(&mut params, &name(k, "c1"), d, 2 * odd.len())?;
            params.insert(name(k, "bound"), Tensor::full(&[odd.len()], 1.0))?;
            let mut perm: Vec<usize> = (0..d).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, k as u64)));
            perms.push(perm);
        }
        Ok(Self {
            config,
            params,
            perms,
            initialized: false,
        })
    }

    /// The identity flow, usable without data-dependent initialization.
    pub fn identity(config: FlowConfig) -> Result<Self> {
        let mut f = Self::new(config)?;
        f.initialized = true;
        Ok(f)
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn permutation(&self, block: usize) -> &[usize] {
        &self.perms[block]
    }

    fn check_ready(&self) -> Result<()> {
        if !self.initialized {
            return Err(Error::contract("flow used before actnorm initialization"));
        }
        Ok(())
    }

    fn check_batch(&self, z: &Tensor) -> Result<()> {
        if z.shape().len() != 2 || z.cols() != self.config.latent || z.rows() == 0 {
            return Err(Error::shape(format!(
                "flow expects a non-empty [B, {}] batch, got {:?}",
                self.config.latent,
                z.shape()
            )));
        }
        Ok(())
    }

    /// Data-dependent initialization: each actnorm layer is set so that the
    /// batch, propagated through the preceding layers, leaves it with zero
    /// mean and unit variance per dimension.
    pub fn actnorm_init(&mut self, batch: &Tensor) -> Result<()> {
        if self.initialized {
            return Err(Error::contract("actnorm is already initialized"));
        }
        self.check_batch(batch)?;
        let d = self.config.latent;
        let n = batch.rows() as f64;
        let mut x = batch.clone();
        for k in 0..self.config.blocks {
            let mut s = vec![0.0; d];
            let mut b = vec![0.0; d];
            for j in 0..d {
                let mean = (0..batch.rows()).map(|r| x.row(r)[j]).sum::<f64>() / n;
                let var = (0..batch.rows()).map(|r| (x.row(r)[j] - mean).powi(2)).sum::<f64>() / n;
                let std = var.sqrt().max(ACTNORM_STD_FLOOR);
                s[j] = 1.0 / std;
                b[j] = -mean / std;
            }
            self.params.set(&name(k, "an.s"), Tensor::vector(s))?;
            self.params.set(&name(k, "an.b"), Tensor::vector(b))?;
            let mut g = Graph::new();
            let p = self.params.bind(&mut g, false);
            let xv = g.constant(x);
            let (y, _, _) = block_graph(&mut g, &p, xv, k, &self.perms[k], d)?;
            x = g.value(y).clone();
        }
        self.initialized = true;
        Ok(())
    }

    /// Forward pass on a tape, for training and gradient checks.
    pub fn forward_graph(&self, g: &mut Graph, p: &Bound, z: Var) -> Result<FlowGraph> {
        self.check_ready()?;
        let d = self.config.latent;
        let rows = g.value(z).rows();
        let mut x = z;
        let mut logdet_rows = g.constant(Tensor::zeros(&[rows]));
        let mut shared: Option<Var> = None;
        for k in 0..self.config.blocks {
            let (y, lr, ls) = block_graph(g, p, x, k, &self.perms[k], d)?;
            x = y;
            logdet_rows = g.add(logdet_rows, lr)?;
            shared = Some(match shared {
                None => ls,
                Some(s) => g.add(s, ls)?,
            });
        }
        Ok(FlowGraph {
            u: x,
            logdet_rows,
            logdet_shared: shared,
        })
    }

    /// `z → (u, log|det J|)` for each row of `z` (`[B, D]`).
    pub fn forward(&self, z: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        self.check_batch(z)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let zv = g.constant(z.clone());
        let out = self.forward_graph(&mut g, &p, zv)?;
        let shared = out.logdet_shared.map(|s| g.value(s).item()).unwrap_or(0.0);
        let logdet = g.value(out.logdet_rows).data().iter().map(|l| l + shared).collect();
        Ok((g.value(out.u).clone(), logdet))
    }

    /// `u → z`, undoing every block in reverse order.
    pub fn inverse(&self, u: &Tensor) -> Result<Tensor> {
        self.check_ready()?;
        self.check_batch(u)?;
        let d = self.config.latent;
        let (even, odd) = halves(d);
        let rows = u.rows();
        let mut x = u.clone();
        for k in (0..self.config.blocks).rev() {
            // undo the shuffle: forward wrote out[j] = in[perm[j]]
            let perm = &self.perms[k];
            let mut unshuffled = Tensor::zeros(&[rows, d]);
            for r in 0..rows {
                for (j, &pj) in perm.iter().enumerate() {
                    unshuffled.data_mut()[r * d + pj] = x.data()[r * d + j];
                }
            }
            // undo the coupling
            let z1: Vec<f64> = (0..rows).flat_map(|r| even.iter().map(move |&c| (r, c))).map(|(r, c)| unshuffled.data()[r * d + c]).collect();
            let z1 = Tensor::new(vec![rows, even.len()], z1)?;
            let (scale, shift) = {
                let mut g = Graph::new();
                let p = self.params.bind(&mut g, false);
                let z1v = g.constant(z1);
                let (sc, sh) = coupling_params(&mut g, &p, z1v, k, odd.len())?;
                (g.value(sc).clone(), g.value(sh).clone())
            };
            for r in 0..rows {
                for (i, &c) in odd.iter().enumerate() {
                    let y2 = unshuffled.data()[r * d + c];
                    let e = r * odd.len() + i;
                    unshuffled.data_mut()[r * d + c] = (y2 - shift.data()[e]) * (-scale.data()[e]).exp();
                }
            }
            // undo actnorm
            let s = self.params.get(&name(k, "an.s"))?;
            let b = self.params.get(&name(k, "an.b"))?;
            for r in 0..rows {
                for j in 0..d {
                    let v = &mut unshuffled.data_mut()[r * d + j];
                    *v = (*v - b.data()[j]) / s.data()[j];
                }
            }
            x = unshuffled;
        }
        Ok(x)
    }

    /// Mean negative log-likelihood of the rows of `z` under the flow density.
    pub fn nll(&self, z: &Tensor) -> Result<f64> {
        self.check_batch(z)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let zv = g.constant(z.clone());
        let l = flow_nll_graph(&mut g, self, &p, zv)?;
        Ok(g.value(l).item())
    }

    /// Draws `count` codes `z = T⁻¹(u)` with `u ~ N(0, I)`.
    pub fn sample(&self, rng: &mut impl Rng, count: usize) -> Result<Tensor> {
        let u = standard_normal(&[count, self.config.latent], rng);
        self.inverse(&u)
    }

    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Checkpoint {
        let manifest = serde_json::json!({
            "kind": "flow",
            "config": self.config,
            "initialized": self.initialized,
            "training": extra,
        });
        let mut c = Checkpoint::new(manifest);
        c.put_params("flow", &self.params);
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.manifest.get("kind").and_then(|k| k.as_str()) != Some("flow") {
            return Err(Error::contract("checkpoint does not hold a flow"));
        }
        let config: FlowConfig = serde_json::from_value(c.manifest["config"].clone())?;
        let mut f = Self::new(config)?;
        c.restore_into("flow", &mut f.params)?;
        f.initialized = c.manifest["initialized"].as_bool().unwrap_or(false);
        Ok(f)
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        self.to_checkpoint(extra).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// `(scale, shift)` of block `k`'s coupling, computed from the conditioning half.
fn coupling_params(g: &mut Graph, p: &Bound, z1: Var, k: usize, half: usize) -> Result<(Var, Var)> {
    let h = linear_named(g, z1, p, &name(k, "c0"))?;
    let h = g.tanh(h);
    let o = linear_named(g, h, p, &name(k, "c1"))?;
    let raw = g.slice_cols(o, 0, half)?;
    let shift = g.slice_cols(o, half, half)?;
    let t = g.tanh(raw);
    let bound = p.get(&name(k, "bound"))?;
    let scale = g.mul_row(t, bound)?;
    Ok((scale, shift))
}

/// One block on the tape: returns `(y, per-row coupling logdet, shared actnorm logdet)`.
fn block_graph(g: &mut Graph, p: &Bound, x: Var, k: usize, perm: &[usize], d: usize) -> Result<(Var, Var, Var)> {
    let (even, odd) = halves(d);
    let s = p.get(&name(k, "an.s"))?;
    let b = p.get(&name(k, "an.b"))?;
    let y = g.mul_row(x, s)?;
    let y = g.add_row(y, b)?;
    let log_s = g.log_abs(s);
    let shared = g.sum(log_s);

    let z1 = g.gather_cols(y, &even)?;
    let z2 = g.gather_cols(y, &odd)?;
    let (scale, shift) = coupling_params(g, p, z1, k, odd.len())?;
    let e = g.exp(scale);
    let y2 = g.mul(z2, e)?;
    let y2 = g.add(y2, shift)?;
    let rows_logdet = g.sum_cols(scale);

    let joined = g.concat_cols(&[z1, y2])?;
    let merged = g.gather_cols(joined, &merge_index(d))?;
    let shuffled = g.gather_cols(merged, perm)?;
    Ok((shuffled, rows_logdet, shared))
}

/// `mean_rows −[log N(u; 0, I) + log|det J|]` on the tape.
pub fn flow_nll_graph(g: &mut Graph, flow: &FlowModel, p: &Bound, z: Var) -> Result<Var> {
    let d = flow.config.latent as f64;
    let out = flow.forward_graph(g, p, z)?;
    // 0.5·‖u‖² + 0.5·D·log 2π − logdet, averaged over rows
    let sq = g.square(out.u);
    let sq = g.sum_cols(sq);
    let half = g.scale(sq, 0.5);
    let per_row = g.sub(half, out.logdet_rows)?;
    let mean = g.mean(per_row);
    let mut total = g.add_scalar(mean, 0.5 * d * LOG_2PI);
    if let Some(s) = out.logdet_shared {
        total = g.sub(total, s)?;
    }
    Ok(total)
}

/// Flow-fitting hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowTrainConfig {
    pub blocks: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for FlowTrainConfig {
    fn default() -> Self {
        Self {
            blocks: 6,
            epochs: 5,
            batch_size: 64,
            lr: 1e-4,
            seed: 0,
        }
    }
}

/// Result of flow fitting: the flow plus the mean training NLL per epoch.
#[derive(Clone, Debug)]
pub struct FlowOutcome {
    pub flow: FlowModel,
    pub epoch_nll: Vec<f64>,
}

/// Fits a flow to the rows of `codes` (`[N, D]`). With zero epochs the
/// identity flow is returned; otherwise actnorm is initialized on all codes
/// and the density is trained with Adam.
pub fn fit_flow(codes: &Tensor, cfg: &FlowTrainConfig) -> Result<FlowOutcome> {
    if codes.shape().len() != 2 || codes.rows() == 0 {
        return Err(Error::contract("flow training needs a non-empty [N, D] code matrix"));
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::contract("flow batch size and learning rate must be positive"));
    }
    let fc = FlowConfig {
        latent: codes.cols(),
        blocks: cfg.blocks,
        seed: cfg.seed,
    };
    if cfg.epochs == 0 {
        return Ok(FlowOutcome {
            flow: FlowModel::identity(fc)?,
            epoch_nll: vec![],
        });
    }
    let mut flow = FlowModel::new(fc)?;
    flow.actnorm_init(codes)?;
    let mut adam = AdamState::new(&flow.params);
    let acfg = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let d = codes.cols();
    let mut epoch_nll = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed ^ 0x666c_6f77, epoch as u64));
        let mut order: Vec<usize> = (0..codes.rows()).collect();
        order.shuffle(&mut rng);
        let (mut total, mut count) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let rows: Vec<f64> = chunk.iter().flat_map(|&i| codes.row(i).to_vec()).collect();
            let mut g = Graph::new();
            let p = flow.params.bind(&mut g, true);
            let z = g.constant(Tensor::new(vec![chunk.len(), d], rows)?);
            let l = flow_nll_graph(&mut g, &flow, &p, z)?;
            let v = g.value(l).item();
            if !v.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    iteration: count,
                    last_good: None,
                });
            }
            total += v * chunk.len() as f64;
            count += chunk.len();
            let grads = g.backward(l)?;
            let gr = p.grads(&grads, &flow.params);
            adam_step(&mut flow.params, &gr, &mut adam, &acfg)?;
        }
        epoch_nll.push(total / count as f64);
    }
    Ok(FlowOutcome { flow, epoch_nll })
}

/// Encodes the training sequences with the frozen behavior model and fits a
/// flow to their posterior means.
pub fn train_flow(model: &BehaviorModel, data: &[PoseSequence], cfg: &FlowTrainConfig) -> Result<FlowOutcome> {
    let codes = crate::train::posterior_means(model, data)?;
    fit_flow(&codes, cfg)
}

/// Where the behavior codes of a recursive synthesis come from.
#[derive(Clone, Copy, Debug)]
pub enum CodeSource<'a> {
    /// Raw draws from the standard-normal prior.
    Prior,
    /// Prior draws mapped through the inverse flow.
    Flow(&'a FlowModel),
}

impl CodeSource<'_> {
    pub fn draw(&self, rng: &mut impl Rng, latent: usize) -> Result<Vec<f64>> {
        match self {
            CodeSource::Prior => Ok(standard_normal(&[latent], rng).into_data()),
            CodeSource::Flow(f) => {
                if f.config.latent != latent {
                    return Err(Error::contract(format!(
                        "flow dimensionality {} does not match the model's latent size {latent}",
                        f.config.latent
                    )));
                }
                Ok(f.sample(rng, 1)?.into_data())
            }
        }
    }
}

/// Synthesizes `segments` consecutive behaviors: each segment decodes a fresh
/// code from the final posture of the previous one (the first from `x_t`).
/// Returns the concatenation, `segments · n` frames long.
pub fn recursive_sample(model: &BehaviorModel, x_t: &[f64], segments: usize, source: CodeSource<'_>, rng: &mut impl Rng) -> Result<PoseSequence> {
    if segments < 1 {
        return Err(Error::contract("recursive sampling needs at least one segment"));
    }
    let n = model.config.frames;
    let mut start = x_t.to_vec();
    let mut parts = Vec::with_capacity(segments);
    for _ in 0..segments {
        let z = source.draw(rng, model.config.latent)?;
        let seg = model.decode(&z, &start, n)?;
        start = seg.last_frame().to_vec();
        parts.push(seg);
    }
    PoseSequence::concat("recursive-sample", &parts)
}

/// Largest per-joint displacement across each segment boundary of a
/// recursive synthesis (`segments − 1` values): between the last frame of
/// segment k and the first generated frame of segment k+1.
pub fn boundary_displacements(seq: &PoseSequence, segment_frames: usize) -> Vec<f64> {
    let k = seq.joints();
    (1..seq.frames() / segment_frames)
        .map(|s| {
            let a = seq.frame(s * segment_frames - 1);
            let b = seq.frame(s * segment_frames);
            (0..k)
                .map(|j| (0..3).map(|c| (a[3 * j + c] - b[3 * j + c]).powi(2)).sum::<f64>().sqrt())
                .fold(0.0, f64::max)
        })
        .collect()
}
