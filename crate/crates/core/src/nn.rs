//! Differentiable building blocks: affine layers, recurrent cells, MLPs and
//! the Gaussian likelihood / KL terms.
//!
//! Parameter naming convention (all prefixed by the caller):
//!
//! | block | names |
//! |-------|-------|
//! | linear | `w [out, in]`, `b [out]` |
//! | LSTM   | `w_ih [4H, in]`, `w_hh [4H, H]`, `b [4H]`, gate order input/forget/cell/output |
//! | GRU    | `w_ih [3H, in]`, `w_hh [3H, H]`, `b_ih [3H]`, `b_hh [3H]`, gate order reset/update/new |
//! | MLP    | `{layer}.w`, `{layer}.b` for `layer = 0..` |

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{Bound, ParamSet};
use crate::tensor::Tensor;

/// Bounds applied to log-variances before exponentiation.
pub const LOGVAR_MIN: f64 = -30.0;
pub const LOGVAR_MAX: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Tanh => g.tanh(x),
            Activation::Relu => g.relu(x),
            Activation::Sigmoid => g.sigmoid(x),
        }
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Affine map along the last axis: `x · wᵀ + b`.
pub fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let (ws, bs) = (g.value(w).shape().to_vec(), g.value(b).shape().to_vec());
    if ws.len() != 2 || bs.iter().product::<usize>() != ws[0] {
        return Err(Error::shape(format!("linear: weight {ws:?} with bias {bs:?}")));
    }
    let y = g.matmul_t(x, w)?;
    g.add_row(y, b)
}

pub fn linear_named(g: &mut Graph, x: Var, p: &Bound, prefix: &str) -> Result<Var> {
    let w = p.get(&join(prefix, "w"))?;
    let b = p.get(&join(prefix, "b"))?;
    linear(g, x, w, b)
}

pub fn init_linear(params: &mut ParamSet, prefix: &str, input: usize, output: usize, rng: &mut impl Rng) -> Result<()> {
    let s = 1.0 / (input as f64).sqrt();
    params.insert_uniform(&join(prefix, "w"), &[output, input], s, rng)?;
    params.insert_uniform(&join(prefix, "b"), &[output], s, rng)
}

pub fn init_linear_zero(params: &mut ParamSet, prefix: &str, input: usize, output: usize) -> Result<()> {
    params.insert_zeros(&join(prefix, "w"), &[output, input])?;
    params.insert_zeros(&join(prefix, "b"), &[output])
}

/// Layer widths plus the hidden activation of a feed-forward stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// `[input, hidden.., output]`
    pub widths: Vec<usize>,
    pub hidden: Activation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, hidden: Activation) -> Self {
        Self { widths, hidden }
    }

    pub fn layers(&self) -> usize {
        self.widths.len().saturating_sub(1)
    }

    pub fn init(&self, params: &mut ParamSet, prefix: &str, rng: &mut impl Rng) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::contract("an MLP needs at least input and output widths"));
        }
        for (i, pair) in self.widths.windows(2).enumerate() {
            init_linear(params, &join(prefix, &i.to_string()), pair[0], pair[1], rng)?;
        }
        Ok(())
    }
}

/// Stacked affine layers with `activations[i]` after layer `i`.
pub fn mlp(g: &mut Graph, x: Var, p: &Bound, prefix: &str, activations: &[Activation]) -> Result<Var> {
    let mut h = x;
    for (i, act) in activations.iter().enumerate() {
        h = linear_named(g, h, p, &join(prefix, &i.to_string()))?;
        h = act.apply(g, h);
    }
    Ok(h)
}

/// Feed-forward stack described by `spec`; the last layer stays linear.
pub fn mlp_spec(g: &mut Graph, x: Var, p: &Bound, prefix: &str, spec: &MlpSpec) -> Result<Var> {
    let mut acts = vec![spec.hidden; spec.layers()];
    if let Some(last) = acts.last_mut() {
        *last = Activation::Identity;
    }
    mlp(g, x, p, prefix, &acts)
}

/// Hidden and cell state of an LSTM.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

pub fn init_lstm(params: &mut ParamSet, prefix: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Result<()> {
    let s = 1.0 / (hidden as f64).sqrt();
    params.insert_uniform(&join(prefix, "w_ih"), &[4 * hidden, input], s, rng)?;
    params.insert_uniform(&join(prefix, "w_hh"), &[4 * hidden, hidden], s, rng)?;
    let mut b = Tensor::zeros(&[4 * hidden]);
    // forget gate starts open
    for v in &mut b.data_mut()[hidden..2 * hidden] {
        *v = 1.0;
    }
    params.insert(join(prefix, "b"), b)
}

/// Precomputes `x · w_ihᵀ + b` for a whole time-major input block.
pub fn lstm_input_projection(g: &mut Graph, xs: Var, p: &Bound, prefix: &str) -> Result<Var> {
    let w = p.get(&join(prefix, "w_ih"))?;
    let b = p.get(&join(prefix, "b"))?;
    linear(g, xs, w, b)
}

/// One LSTM step given the already projected input `x · w_ihᵀ + b`.
pub fn lstm_step_projected(g: &mut Graph, gx: Var, state: LstmState, p: &Bound, prefix: &str) -> Result<LstmState> {
    let hidden = g.value(state.h).cols();
    if g.value(state.c).cols() != hidden || g.value(gx).cols() != 4 * hidden {
        return Err(Error::shape(format!(
            "lstm: state width {hidden} does not match gates {:?}",
            g.value(gx).shape()
        )));
    }
    let w_hh = p.get(&join(prefix, "w_hh"))?;
    let gh = g.matmul_t(state.h, w_hh)?;
    let gates = g.add(gx, gh)?;
    let i = g.slice_cols(gates, 0, hidden)?;
    let f = g.slice_cols(gates, hidden, hidden)?;
    let c_hat = g.slice_cols(gates, 2 * hidden, hidden)?;
    let o = g.slice_cols(gates, 3 * hidden, hidden)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let c_hat = g.tanh(c_hat);
    let o = g.sigmoid(o);
    let keep = g.mul(f, state.c)?;
    let write = g.mul(i, c_hat)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok(LstmState { h, c })
}

/// One gated recurrent step: `(h, c) -> (h', c')`.
pub fn recurrent_cell(g: &mut Graph, x: Var, state: LstmState, p: &Bound, prefix: &str) -> Result<LstmState> {
    let w_ih = p.get(&join(prefix, "w_ih"))?;
    if g.value(x).cols() != g.value(w_ih).shape()[1] {
        return Err(Error::shape(format!(
            "lstm: input width {} but w_ih is {:?}",
            g.value(x).cols(),
            g.value(w_ih).shape()
        )));
    }
    let gx = lstm_input_projection(g, x, p, prefix)?;
    lstm_step_projected(g, gx, state, p, prefix)
}

pub fn init_gru(params: &mut ParamSet, prefix: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Result<()> {
    let s = 1.0 / (hidden as f64).sqrt();
    params.insert_uniform(&join(prefix, "w_ih"), &[3 * hidden, input], s, rng)?;
    params.insert_uniform(&join(prefix, "w_hh"), &[3 * hidden, hidden], s, rng)?;
    params.insert_uniform(&join(prefix, "b_ih"), &[3 * hidden], s, rng)?;
    params.insert_uniform(&join(prefix, "b_hh"), &[3 * hidden], s, rng)
}

/// One GRU step given the projected input `x · w_ihᵀ + b_ih`.
pub fn gru_step_projected(g: &mut Graph, gx: Var, h: Var, p: &Bound, prefix: &str) -> Result<Var> {
    let hidden = g.value(h).cols();
    let w_hh = p.get(&join(prefix, "w_hh"))?;
    let b_hh = p.get(&join(prefix, "b_hh"))?;
    let gh = linear(g, h, w_hh, b_hh)?;
    let xr = g.slice_cols(gx, 0, hidden)?;
    let xz = g.slice_cols(gx, hidden, hidden)?;
    let xn = g.slice_cols(gx, 2 * hidden, hidden)?;
    let hr = g.slice_cols(gh, 0, hidden)?;
    let hz = g.slice_cols(gh, hidden, hidden)?;
    let hn = g.slice_cols(gh, 2 * hidden, hidden)?;
    let r = g.add(xr, hr)?;
    let r = g.sigmoid(r);
    let z = g.add(xz, hz)?;
    let z = g.sigmoid(z);
    let rh = g.mul(r, hn)?;
    let n = g.add(xn, rh)?;
    let n = g.tanh(n);
    // h' = n + z ⊙ (h - n)
    let d = g.sub(h, n)?;
    let zd = g.mul(z, d)?;
    g.add(n, zd)
}

/// Mean squared error over all elements.
pub fn gaussian_recon_nll(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    if g.value(pred).len() != g.value(target).len() {
        return Err(Error::shape(format!(
            "recon: {:?} vs {:?}",
            g.value(pred).shape(),
            g.value(target).shape()
        )));
    }
    let target = if g.value(pred).shape() == g.value(target).shape() {
        target
    } else {
        let shape = g.value(pred).shape().to_vec();
        g.reshape(target, &shape)?
    };
    let d = g.sub(pred, target)?;
    let sq = g.square(d);
    Ok(g.mean(sq))
}

/// KL divergence (nats) of `N(mu, exp(logvar))` from `N(0, I)`, summed over
/// the last axis and averaged over rows.
pub fn diag_gauss_kl(g: &mut Graph, mu: Var, logvar: Var) -> Result<Var> {
    if g.value(mu).shape() != g.value(logvar).shape() {
        return Err(Error::shape("kl: mu and logvar shapes differ"));
    }
    let rows = g.value(mu).rows() as f64;
    let lv = g.clamp(logvar, LOGVAR_MIN, LOGVAR_MAX);
    let m2 = g.square(mu);
    let ev = g.exp(lv);
    let a = g.add(m2, ev)?;
    let a = g.sub(a, lv)?;
    let a = g.add_scalar(a, -1.0);
    let s = g.sum(a);
    Ok(g.scale(s, 0.5 / rows))
}

/// Closed-form KL of one diagonal Gaussian, without a graph.
pub fn diag_gauss_kl_value(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter()
        .zip(logvar)
        .map(|(&m, &lv)| {
            let lv = lv.clamp(LOGVAR_MIN, LOGVAR_MAX);
            0.5 * (m * m + lv.exp() - 1.0 - lv)
        })
        .sum()
}

/// `mu + exp(logvar / 2) ⊙ eps`.
pub fn reparameterize(g: &mut Graph, mu: Var, logvar: Var, eps: Tensor) -> Result<Var> {
    if g.value(mu).shape() != eps.shape() {
        return Err(Error::shape("reparameterize: noise shape differs from mu"));
    }
    let lv = g.clamp(logvar, LOGVAR_MIN, LOGVAR_MAX);
    let half = g.scale(lv, 0.5);
    let std = g.exp(half);
    let e = g.constant(eps);
    let noise = g.mul(std, e)?;
    g.add(mu, noise)
}

/// Standard normal draws of the given shape.
pub fn standard_normal(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).expect("positive extents")
}
