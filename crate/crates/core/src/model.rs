//! The conditional variational behavior model: LSTM encoder q(z|x), residual
//! autoregressive LSTM decoder p(x|z, x_t), auxiliary MLP decoder p̂(x|z), the
//! loss terms and the information-budget dual update.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::PoseSequence;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{
    diag_gauss_kl, gaussian_recon_nll, init_linear, init_lstm, linear_named, lstm_input_projection,
    lstm_step_projected, mlp_spec, recurrent_cell, reparameterize, Activation, LstmState, MlpSpec, LOGVAR_MAX,
    LOGVAR_MIN,
};
use crate::params::{Bound, ParamSet, Role};
use crate::tensor::Tensor;

/// Architecture sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub joints: usize,
    pub frames: usize,
    /// Latent dimension D.
    pub latent: usize,
    /// LSTM hidden size H.
    pub hidden: usize,
    /// Hidden width of the auxiliary MLP.
    pub aux_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            joints: 17,
            frames: 50,
            latent: 64,
            hidden: 128,
            aux_hidden: 256,
        }
    }
}

impl ModelConfig {
    /// Values per frame.
    pub fn width(&self) -> usize {
        self.joints * 3
    }

    pub fn aux_spec(&self) -> MlpSpec {
        MlpSpec::new(
            vec![self.latent, self.aux_hidden, self.aux_hidden, self.frames * self.width()],
            Activation::Relu,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints == 0 || self.latent == 0 || self.hidden == 0 || self.aux_hidden == 0 {
            return Err(Error::contract("model sizes must be positive"));
        }
        if self.frames < 2 {
            return Err(Error::contract("sequences need at least two frames"));
        }
        Ok(())
    }
}

/// Posterior statistics of one sequence plus the drawn code.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorCode {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
    /// Noise used for `sample`; all zeros for posterior-mean codes.
    pub eps: Vec<f64>,
    /// `mu + exp(logvar / 2) ⊙ eps`.
    pub sample: Vec<f64>,
}

impl BehaviorCode {
    pub fn mean_code(mu: Vec<f64>, logvar: Vec<f64>) -> Self {
        Self {
            eps: vec![0.0; mu.len()],
            sample: mu.clone(),
            mu,
            logvar,
        }
    }
}

/// Lagrange multiplier and budget of the information constraint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetState {
    pub gamma_kl: f64,
    /// Information budget in nats.
    pub i_kl: f64,
    pub gamma_c: f64,
    pub dual_lr: f64,
}

impl BudgetState {
    /// Dual ascent on the KL constraint: `γ ← max(0, γ + lr·(KL − I))`.
    pub fn dual_update(&self, observed_kl: f64) -> BudgetState {
        BudgetState {
            gamma_kl: (self.gamma_kl + self.dual_lr * (observed_kl - self.i_kl)).max(0.0),
            ..*self
        }
    }
}

/// Which training objective is optimized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Reconstruction + budgeted KL + adversarial auxiliary term.
    Full,
    /// As `Full` with the auxiliary weight forced to zero.
    DisableAux,
    /// Plain conditional ELBO with a fixed unit KL weight.
    VanillaCvae,
    /// Deterministic autoencoder: the code is the posterior mean, no KL.
    Cae,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Full => "full",
            Objective::DisableAux => "disable-aux",
            Objective::VanillaCvae => "vanilla-cvae",
            Objective::Cae => "cae",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.replace('_', "-").as_str() {
            "full" | "ours" => Ok(Objective::Full),
            "disable-aux" => Ok(Objective::DisableAux),
            "vanilla-cvae" | "cvae" => Ok(Objective::VanillaCvae),
            "cae" => Ok(Objective::Cae),
            other => Err(Error::contract(format!("unknown objective `{other}`"))),
        }
    }

    pub fn samples_code(self) -> bool {
        self != Objective::Cae
    }
}

/// A batch placed on a graph in the two layouts the model needs.
#[derive(Clone, Copy, Debug)]
pub struct BatchVars {
    /// `[n·B, W]`, row `t·B + b` is frame `t` of sequence `b`.
    pub x_time_major: Var,
    /// `[B, n·W]`, one flattened sequence per row.
    pub x_batch_major: Var,
    /// `[B, W]` conditioning postures.
    pub x_t: Var,
    pub batch: usize,
}

/// Time-major `[n·B, W]` block of a batch of sequences.
pub fn time_major(seqs: &[&PoseSequence]) -> Result<Tensor> {
    let first = seqs.first().ok_or_else(|| Error::contract("empty batch"))?;
    let (n, w, b) = (first.frames(), first.frame_width(), seqs.len());
    let mut data = vec![0.0; n * b * w];
    for (bi, s) in seqs.iter().enumerate() {
        if s.frames() != n || s.frame_width() != w {
            return Err(Error::contract(format!("sequence `{}` does not match the batch shape", s.id)));
        }
        for t in 0..n {
            data[(t * b + bi) * w..(t * b + bi + 1) * w].copy_from_slice(s.frame(t));
        }
    }
    Tensor::new(vec![n * b, w], data)
}

/// Places a batch on `g` as constants, conditioning on each first frame.
pub fn batch_vars(g: &mut Graph, seqs: &[&PoseSequence]) -> Result<BatchVars> {
    let tm = time_major(seqs)?;
    let (n, w, b) = (seqs[0].frames(), seqs[0].frame_width(), seqs.len());
    let bm: Vec<f64> = seqs.iter().flat_map(|s| s.data().iter().copied()).collect();
    let xt: Vec<f64> = seqs.iter().flat_map(|s| s.first_frame().iter().copied()).collect();
    Ok(BatchVars {
        x_time_major: g.constant(tm),
        x_batch_major: g.constant(Tensor::new(vec![b, n * w], bm)?),
        x_t: g.constant(Tensor::new(vec![b, w], xt)?),
        batch: b,
    })
}

/// Encoder pass over a time-major block: returns `(mu, logvar)`, each `[B, D]`.
pub fn encode_graph(g: &mut Graph, enc: &Bound, x_time_major: Var, batch: usize, cfg: &ModelConfig) -> Result<(Var, Var)> {
    let xv = g.value(x_time_major);
    if xv.cols() != cfg.width() {
        return Err(Error::contract(format!(
            "encoder expects {} values per frame, got {}",
            cfg.width(),
            xv.cols()
        )));
    }
    if xv.rows() != cfg.frames * batch {
        return Err(Error::contract(format!(
            "encoder configured for {} frames, got {}",
            cfg.frames,
            xv.rows() / batch.max(1)
        )));
    }
    let gx = lstm_input_projection(g, x_time_major, enc, "lstm")?;
    let zeros = Tensor::zeros(&[batch, cfg.hidden]);
    let mut state = LstmState {
        h: g.constant(zeros.clone()),
        c: g.constant(zeros),
    };
    for t in 0..cfg.frames {
        let gx_t = g.slice_rows(gx, t * batch, batch)?;
        state = lstm_step_projected(g, gx_t, state, enc, "lstm")?;
    }
    let mu = linear_named(g, state.h, enc, "mu")?;
    let logvar = linear_named(g, state.h, enc, "logvar")?;
    Ok((mu, logvar))
}

/// Autoregressive residual decoder. Returns the `[steps·B, W]` time-major
/// block of generated frames.
pub fn decode_graph(g: &mut Graph, dec: &Bound, z: Var, x_t: Var, steps: usize, cfg: &ModelConfig) -> Result<Var> {
    let zv = g.value(z);
    if zv.cols() != cfg.latent {
        return Err(Error::shape(format!("decoder expects codes of length {}, got {}", cfg.latent, zv.cols())));
    }
    let batch = zv.rows();
    if g.value(x_t).cols() != cfg.width() || g.value(x_t).rows() != batch {
        return Err(Error::shape(format!(
            "decoder conditioning posture has shape {:?}, expected [{batch}, {}]",
            g.value(x_t).shape(),
            cfg.width()
        )));
    }
    if steps == 0 {
        return Err(Error::contract("decode needs at least one step"));
    }
    let h0 = if dec.has("z2h.w") {
        linear_named(g, z, dec, "z2h")?
    } else {
        z
    };
    let mut state = LstmState {
        h: h0,
        c: g.constant(Tensor::zeros(&[batch, cfg.hidden])),
    };
    let mut input = x_t;
    let mut outs = Vec::with_capacity(steps);
    for _ in 0..steps {
        state = recurrent_cell(g, input, state, dec, "lstm")?;
        let delta = linear_named(g, state.h, dec, "out")?;
        let frame = g.add(input, delta)?;
        outs.push(frame);
        input = frame;
    }
    g.concat_rows(&outs)
}

/// Auxiliary decoder: `[B, D] → [B, n·W]`.
pub fn aux_graph(g: &mut Graph, aux: &Bound, z: Var, cfg: &ModelConfig) -> Result<Var> {
    if g.value(z).cols() != cfg.latent {
        return Err(Error::shape(format!("aux decoder expects codes of length {}", cfg.latent)));
    }
    mlp_spec(g, z, aux, "mlp", &cfg.aux_spec())
}

/// Auxiliary likelihood term: MSE of the auxiliary reconstruction from a
/// detached code. Gradients reach ψ only.
pub fn loss_aux(g: &mut Graph, aux: &Bound, z_detached: Var, x_batch_major: Var, cfg: &ModelConfig) -> Result<Var> {
    if g.requires_grad(z_detached) {
        return Err(Error::contract("loss_aux needs a detached code (no gradient path to the encoder)"));
    }
    let pred = aux_graph(g, aux, z_detached, cfg)?;
    gaussian_recon_nll(g, pred, x_batch_major)
}

/// Terms of the main objective, as graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct MainLoss {
    pub recon: Var,
    pub kl: Var,
    pub aux: Var,
    pub total: Var,
}

/// `total = recon + γ_KL·(KL − I_KL) − γ_C·aux`, optionally with the
/// adversarial reward capped at `aux_cap`. The auxiliary network must be
/// bound as constants.
#[allow(clippy::too_many_arguments)]
pub fn loss_main(
    g: &mut Graph,
    dec: &Bound,
    aux_frozen: &Bound,
    x: &BatchVars,
    z: Var,
    mu: Var,
    logvar: Var,
    budget: &BudgetState,
    aux_cap: Option<f64>,
    cfg: &ModelConfig,
) -> Result<MainLoss> {
    let pred = decode_graph(g, dec, z, x.x_t, cfg.frames, cfg)?;
    let recon = gaussian_recon_nll(g, pred, x.x_time_major)?;
    let kl = diag_gauss_kl(g, mu, logvar)?;
    let aux_pred = aux_graph(g, aux_frozen, z, cfg)?;
    let aux = gaussian_recon_nll(g, aux_pred, x.x_batch_major)?;

    let kl_gap = g.add_scalar(kl, -budget.i_kl);
    let kl_term = g.scale(kl_gap, budget.gamma_kl);
    let mut total = g.add(recon, kl_term)?;
    if budget.gamma_c != 0.0 {
        let reward = budget.gamma_c * g.value(aux).item();
        let capped = aux_cap.is_some_and(|cap| reward > cap);
        let aux_term = if capped {
            g.constant(Tensor::scalar(-aux_cap.expect("checked")))
        } else {
            g.scale(aux, -budget.gamma_c)
        };
        total = g.add(total, aux_term)?;
    }
    Ok(MainLoss { recon, kl, aux, total })
}

/// Parameters of the three networks.
#[derive(Clone, Debug, PartialEq)]
pub struct BehaviorModel {
    pub config: ModelConfig,
    pub encoder: ParamSet,
    pub decoder: ParamSet,
    pub aux: ParamSet,
}

impl BehaviorModel {
    /// Random initialization; fully determined by `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, d, h) = (config.width(), config.latent, config.hidden);

        let mut encoder = ParamSet::new(Role::Encoder);
        init_lstm(&mut encoder, "lstm", w, h, &mut rng)?;
        init_linear(&mut encoder, "mu", h, d, &mut rng)?;
        init_linear(&mut encoder, "logvar", h, d, &mut rng)?;

        let mut decoder = ParamSet::new(Role::Decoder);
        init_lstm(&mut decoder, "lstm", w, h, &mut rng)?;
        if d != h {
            init_linear(&mut decoder, "z2h", d, h, &mut rng)?;
        }
        // small residual head: the decoder starts close to "hold the posture"
        let s = 0.1 / (h as f64).sqrt();
        decoder.insert_uniform("out.w", &[w, h], s, &mut rng)?;
        decoder.insert_zeros("out.b", &[w])?;

        let mut aux = ParamSet::new(Role::Aux);
        config.aux_spec().init(&mut aux, "mlp", &mut rng)?;
        Ok(Self {
            config,
            encoder,
            decoder,
            aux,
        })
    }

    fn check_seq(&self, s: &PoseSequence) -> Result<()> {
        if s.frames() != self.config.frames {
            return Err(Error::contract(format!(
                "sequence `{}` has {} frames, model is configured for {}",
                s.id,
                s.frames(),
                self.config.frames
            )));
        }
        if s.joints() != self.config.joints {
            return Err(Error::contract(format!(
                "sequence `{}` has {} joints, model expects {}",
                s.id,
                s.joints(),
                self.config.joints
            )));
        }
        Ok(())
    }

    /// Posterior-mean codes for a batch of (normalized) sequences.
    pub fn encode_batch(&self, seqs: &[&PoseSequence]) -> Result<Vec<BehaviorCode>> {
        for s in seqs {
            self.check_seq(s)?;
        }
        let mut g = Graph::new();
        let enc = self.encoder.bind(&mut g, false);
        let tm = g.constant(time_major(seqs)?);
        let (mu, lv) = encode_graph(&mut g, &enc, tm, seqs.len(), &self.config)?;
        let d = self.config.latent;
        let (mu, lv) = (g.value(mu), g.value(lv));
        Ok((0..seqs.len())
            .map(|b| {
                let logvar = lv.data()[b * d..(b + 1) * d]
                    .iter()
                    .map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX))
                    .collect();
                BehaviorCode::mean_code(mu.data()[b * d..(b + 1) * d].to_vec(), logvar)
            })
            .collect())
    }

    /// Encodes many sequences in fixed-size chunks.
    pub fn encode_all(&self, seqs: &[PoseSequence]) -> Result<Vec<BehaviorCode>> {
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(64) {
            let refs: Vec<&PoseSequence> = chunk.iter().collect();
            out.extend(self.encode_batch(&refs)?);
        }
        Ok(out)
    }

    pub fn encode(&self, x: &PoseSequence) -> Result<BehaviorCode> {
        Ok(self.encode_batch(&[x])?.remove(0))
    }

    /// Decodes one sequence per `(z, x_t)` pair.
    pub fn decode_batch(&self, zs: &[Vec<f64>], x_ts: &[Vec<f64>], steps: usize) -> Result<Vec<PoseSequence>> {
        if zs.len() != x_ts.len() || zs.is_empty() {
            return Err(Error::contract("decode needs one conditioning posture per code"));
        }
        let (d, w) = (self.config.latent, self.config.width());
        if let Some(z) = zs.iter().find(|z| z.len() != d) {
            return Err(Error::shape(format!("code has length {}, model latent is {d}", z.len())));
        }
        if let Some(x) = x_ts.iter().find(|x| x.len() != w) {
            return Err(Error::shape(format!("posture has {} values, model expects {w}", x.len())));
        }
        let b = zs.len();
        let mut g = Graph::new();
        let dec = self.decoder.bind(&mut g, false);
        let z = g.constant(Tensor::new(vec![b, d], zs.concat())?);
        let xt = g.constant(Tensor::new(vec![b, w], x_ts.concat())?);
        let out = decode_graph(&mut g, &dec, z, xt, steps, &self.config)?;
        let out = g.value(out);
        (0..b)
            .map(|bi| {
                let mut data = Vec::with_capacity(steps * w);
                for t in 0..steps {
                    data.extend_from_slice(out.row(t * b + bi));
                }
                PoseSequence::new(format!("decoded-{bi}"), None, steps, self.config.joints, data)
            })
            .collect()
    }

    pub fn decode(&self, z: &[f64], x_t: &[f64], steps: usize) -> Result<PoseSequence> {
        Ok(self.decode_batch(&[z.to_vec()], &[x_t.to_vec()], steps)?.remove(0))
    }

    /// One-shot auxiliary reconstruction from a code.
    pub fn aux_predict(&self, z: &[f64]) -> Result<PoseSequence> {
        if z.len() != self.config.latent {
            return Err(Error::shape(format!("code has length {}, model latent is {}", z.len(), self.config.latent)));
        }
        let mut g = Graph::new();
        let aux = self.aux.bind(&mut g, false);
        let zv = g.constant(Tensor::new(vec![1, z.len()], z.to_vec())?);
        let out = aux_graph(&mut g, &aux, zv, &self.config)?;
        PoseSequence::new("aux", None, self.config.frames, self.config.joints, g.value(out).data().to_vec())
    }

    /// Re-enacts the behavior of `source` starting from `target_posture`.
    pub fn transfer(&self, source: &PoseSequence, target_posture: &[f64]) -> Result<PoseSequence> {
        Ok(self.transfer_batch(&[source], &[target_posture.to_vec()])?.remove(0))
    }

    pub fn transfer_batch(&self, sources: &[&PoseSequence], targets: &[Vec<f64>]) -> Result<Vec<PoseSequence>> {
        let codes = self.encode_batch(sources)?;
        let zs: Vec<Vec<f64>> = codes.into_iter().map(|c| c.mu).collect();
        let mut out = self.decode_batch(&zs, targets, self.config.frames)?;
        for (o, s) in out.iter_mut().zip(sources) {
            o.id = format!("transfer-{}", s.id);
            o.family = s.family.clone();
        }
        Ok(out)
    }

    /// Decodes convex combinations of two posterior means. The conditioning
    /// posture is `seq1`'s first frame, except at `λ = 1` where it is `seq2`'s.
    pub fn interpolate(&self, seq1: &PoseSequence, seq2: &PoseSequence, lambdas: &[f64]) -> Result<Vec<PoseSequence>> {
        if let Some(l) = lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
            return Err(Error::contract(format!("interpolation weight {l} outside [0, 1]")));
        }
        if lambdas.is_empty() {
            return Ok(Vec::new());
        }
        let codes = self.encode_batch(&[seq1, seq2])?;
        let (z1, z2) = (&codes[0].mu, &codes[1].mu);
        let zs: Vec<Vec<f64>> = lambdas
            .iter()
            .map(|&l| z1.iter().zip(z2).map(|(a, b)| (1.0 - l) * a + l * b).collect())
            .collect();
        let xts: Vec<Vec<f64>> = lambdas
            .iter()
            .map(|&l| {
                if l == 1.0 {
                    seq2.first_frame().to_vec()
                } else {
                    seq1.first_frame().to_vec()
                }
            })
            .collect();
        let mut out = self.decode_batch(&zs, &xts, self.config.frames)?;
        for (o, l) in out.iter_mut().zip(lambdas) {
            o.id = format!("interp-{l:.2}");
        }
        Ok(out)
    }

    /// Content digest over every parameter of every network.
    pub fn digest(&self) -> String {
        crate::fsutil::sha256_hex(
            format!("{}{}{}", self.encoder.digest(), self.decoder.digest(), self.aux.digest()).as_bytes(),
        )
    }
}

/// Samples `z = mu + σ ⊙ ε` on the graph for a training step.
pub fn sample_code(g: &mut Graph, mu: Var, logvar: Var, eps: Tensor) -> Result<Var> {
    reparameterize(g, mu, logvar, eps)
}

/// Interpolation grid used by default.
pub const DEFAULT_LAMBDAS: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
