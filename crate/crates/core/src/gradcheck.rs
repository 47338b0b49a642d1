//! Central finite-difference verification of reverse-mode gradients.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::Bound;
use crate::tensor::Tensor;

/// Relative error `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<(Graph, Vec<Var>, Var)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    if !g.value(out).is_scalar() {
        return Err(Error::contract(format!(
            "grad_check needs a scalar-valued closure, got shape {:?}",
            g.value(out).shape()
        )));
    }
    Ok((g, vars, out))
}

/// Compares the taped gradient of `f` with central finite differences at
/// every coordinate of every input, using the five-point central stencil
/// `(8(f(x+h) − f(x−h)) − (f(x+2h) − f(x−2h))) / 12h`. Returns the largest
/// relative error.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let (g, vars, out) = evaluate(&f, inputs)?;
    let grads = g.backward(out)?;
    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for (k, &v) in vars.iter().enumerate() {
        let analytic = grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        for i in 0..inputs[k].len() {
            let x0 = inputs[k].data()[i];
            let mut at = |h: f64| -> Result<f64> {
                probe[k].data_mut()[i] = x0 + h;
                let (g, _, out) = evaluate(&f, &probe)?;
                Ok(g.value(out).item())
            };
            let (p1, m1) = (at(eps)?, at(-eps)?);
            let (p2, m2) = (at(2.0 * eps)?, at(-2.0 * eps)?);
            probe[k].data_mut()[i] = x0;
            // five-point central stencil: truncation error O(eps⁴)
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * eps);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
        }
    }
    Ok(worst)
}

/// A differentiable primitive with random-input generation, reduced to a
/// scalar through a fixed non-uniform weighting of its output.
pub struct PrimitiveCase {
    pub name: &'static str,
    shapes: Vec<Vec<usize>>,
    /// Points near which the primitive has a kink; inputs are redrawn until
    /// every coordinate is at least `1e-2` away from all of them.
    avoid: Vec<f64>,
    f: fn(&mut Graph, &[Var]) -> Result<Var>,
}

impl PrimitiveCase {
    /// Random inputs in `[-1.5, 1.5]` (away from any kinks).
    pub fn inputs(&self, rng: &mut impl Rng) -> Vec<Tensor> {
        self.shapes
            .iter()
            .map(|shape| {
                let n: usize = shape.iter().product();
                let data = (0..n)
                    .map(|_| loop {
                        let v: f64 = rng.gen_range(-1.5..1.5);
                        if self.avoid.iter().all(|a| (v - a).abs() >= 1e-2) {
                            break v;
                        }
                    })
                    .collect();
                Tensor::new(shape.clone(), data).expect("shape matches data")
            })
            .collect()
    }

    /// Largest relative gradient error at one random instance.
    pub fn check(&self, rng: &mut impl Rng, eps: f64) -> Result<f64> {
        let inputs = self.inputs(rng);
        grad_check(self.f, &inputs, eps)
    }
}

/// `Σ_i c_i y_i` with `c_i = 1 + (i mod 7)/4`, so no output coordinate's
/// gradient cancels by symmetry.
pub fn weighted_sum(g: &mut Graph, y: Var) -> Result<Var> {
    let shape = g.value(y).shape().to_vec();
    let n = g.value(y).len();
    let c = g.constant(Tensor::new(shape, (0..n).map(|i| 1.0 + (i % 7) as f64 / 4.0).collect())?);
    let p = g.mul(y, c)?;
    Ok(g.sum(p))
}

fn case(name: &'static str, shapes: &[&[usize]], avoid: &[f64], f: fn(&mut Graph, &[Var]) -> Result<Var>) -> PrimitiveCase {
    PrimitiveCase {
        name,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        avoid: avoid.to_vec(),
        f,
    }
}

fn bound(pairs: &[(&str, Var)]) -> Bound {
    Bound::from_pairs(pairs)
}

/// Every tape primitive plus the layers and likelihood terms built on them.
pub fn primitive_cases() -> Vec<PrimitiveCase> {
    use crate::nn::{
        diag_gauss_kl, gaussian_recon_nll, gru_step_projected, linear, mlp, recurrent_cell, reparameterize, Activation, LstmState,
    };
    vec![
        case("matmul_t", &[&[3, 4], &[5, 4]], &[], |g, v| {
            let y = g.matmul_t(v[0], v[1])?;
            weighted_sum(g, y)
        }),
        case("add_row", &[&[3, 4], &[4]], &[], |g, v| {
            let y = g.add_row(v[0], v[1])?;
            let y = g.square(y);
            weighted_sum(g, y)
        }),
        case("mul_row", &[&[3, 4], &[4]], &[], |g, v| {
            let y = g.mul_row(v[0], v[1])?;
            weighted_sum(g, y)
        }),
        case("add", &[&[3, 4], &[3, 4]], &[], |g, v| {
            let y = g.add(v[0], v[1])?;
            let y = g.square(y);
            weighted_sum(g, y)
        }),
        case("sub", &[&[3, 4], &[3, 4]], &[], |g, v| {
            let y = g.sub(v[0], v[1])?;
            let y = g.square(y);
            weighted_sum(g, y)
        }),
        case("mul", &[&[3, 4], &[3, 4]], &[], |g, v| {
            let y = g.mul(v[0], v[1])?;
            weighted_sum(g, y)
        }),
        case("scale", &[&[2, 5]], &[], |g, v| {
            let y = g.scale(v[0], -1.7);
            let y = g.square(y);
            weighted_sum(g, y)
        }),
        case("add_scalar", &[&[2, 5]], &[], |g, v| {
            let y = g.add_scalar(v[0], 0.3);
            let y = g.square(y);
            weighted_sum(g, y)
        }),
        case("sigmoid", &[&[3, 4]], &[], |g, v| {
            let y = g.sigmoid(v[0]);
            weighted_sum(g, y)
        }),
        case("tanh", &[&[3, 4]], &[], |g, v| {
            let y = g.tanh(v[0]);
            weighted_sum(g, y)
        }),
        case("exp", &[&[3, 4]], &[], |g, v| {
            let y = g.exp(v[0]);
            weighted_sum(g, y)
        }),
        case("relu", &[&[3, 4]], &[0.0], |g, v| {
            let y = g.relu(v[0]);
            let y = g.square(y);
            weighted_sum(g, y)
        }),
        case("log_abs", &[&[3, 4]], &[0.0], |g, v| {
            let y = g.log_abs(v[0]);
            weighted_sum(g, y)
        }),
        case("square", &[&[3, 4]], &[], |g, v| {
            let y = g.square(v[0]);
            weighted_sum(g, y)
        }),
        case("clamp", &[&[4, 4]], &[-0.5, 0.5], |g, v| {
            let y = g.clamp(v[0], -0.5, 0.5);
            let y = g.square(y);
            weighted_sum(g, y)
        }),
        case("slice_cols", &[&[3, 5]], &[], |g, v| {
            let y = g.slice_cols(v[0], 1, 3)?;
            let y = g.square(y);
            weighted_sum(g, y)
        }),
        case("slice_rows", &[&[4, 3]], &[], |g, v| {
            let y = g.slice_rows(v[0], 1, 2)?;
            let y = g.square(y);
            weighted_sum(g, y)
        }),
        case("concat_cols", &[&[3, 2], &[3, 3]], &[], |g, v| {
            let y = g.concat_cols(&[v[0], v[1]])?;
            let y = g.square(y);
            weighted_sum(g, y)
        }),
        case("concat_rows", &[&[2, 3], &[1, 3]], &[], |g, v| {
            let y = g.concat_rows(&[v[0], v[1]])?;
            let y = g.square(y);
            weighted_sum(g, y)
        }),
        case("gather_cols", &[&[3, 4]], &[], |g, v| {
            let y = g.gather_cols(v[0], &[2, 0, 2, 1])?;
            let y = g.square(y);
            weighted_sum(g, y)
        }),
        case("sum", &[&[3, 4]], &[], |g, v| {
            let y = g.square(v[0]);
            Ok(g.sum(y))
        }),
        case("mean", &[&[3, 4]], &[], |g, v| {
            let y = g.square(v[0]);
            Ok(g.mean(y))
        }),
        case("sum_cols", &[&[3, 4]], &[], |g, v| {
            let y = g.square(v[0]);
            let y = g.sum_cols(y);
            weighted_sum(g, y)
        }),
        case("reshape", &[&[3, 4]], &[], |g, v| {
            let y = g.reshape(v[0], &[2, 6])?;
            let y = g.square(y);
            weighted_sum(g, y)
        }),
        case("softmax_xent", &[&[3, 4]], &[], |g, v| g.softmax_xent(v[0], &[1, 0, 3])),
        case("bce_logits", &[&[4, 1]], &[], |g, v| g.bce_logits(v[0], &[1.0, 0.0, 0.3, 1.0])),
        case("linear", &[&[3, 4], &[5, 4], &[5]], &[], |g, v| {
            let y = linear(g, v[0], v[1], v[2])?;
            weighted_sum(g, y)
        }),
        case("lstm_cell", &[&[2, 3], &[2, 4], &[2, 4], &[16, 3], &[16, 4], &[16]], &[], |g, v| {
            let p = bound(&[("c.w_ih", v[3]), ("c.w_hh", v[4]), ("c.b", v[5])]);
            let s = recurrent_cell(g, v[0], LstmState { h: v[1], c: v[2] }, &p, "c")?;
            let h = weighted_sum(g, s.h)?;
            let c = weighted_sum(g, s.c)?;
            g.add(h, c)
        }),
        case("gru_cell", &[&[2, 9], &[2, 3], &[9, 3], &[9]], &[], |g, v| {
            let p = bound(&[("r.w_hh", v[2]), ("r.b_hh", v[3])]);
            let h = gru_step_projected(g, v[0], v[1], &p, "r")?;
            weighted_sum(g, h)
        }),
        case("mlp", &[&[2, 3], &[4, 3], &[4], &[2, 4], &[2]], &[], |g, v| {
            let p = bound(&[("m.0.w", v[1]), ("m.0.b", v[2]), ("m.1.w", v[3]), ("m.1.b", v[4])]);
            let y = mlp(g, v[0], &p, "m", &[Activation::Tanh, Activation::Identity])?;
            weighted_sum(g, y)
        }),
        case("gaussian_recon_nll", &[&[3, 4], &[3, 4]], &[], |g, v| gaussian_recon_nll(g, v[0], v[1])),
        case("diag_gauss_kl", &[&[3, 4], &[3, 4]], &[], |g, v| diag_gauss_kl(g, v[0], v[1])),
        case("reparameterize", &[&[2, 3], &[2, 3]], &[], |g, v| {
            let eps = Tensor::new(vec![2, 3], vec![0.3, -1.2, 0.8, 1.5, -0.4, 0.1])?;
            let z = reparameterize(g, v[0], v[1], eps)?;
            weighted_sum(g, z)
        }),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_scalar_closure_is_contract_error() {
        let r = grad_check(|g, v| Ok(g.tanh(v[0])), &[Tensor::vector(vec![1.0, 2.0])], 1e-5);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn log_abs_passes_on_both_signs() {
        let err = grad_check(
            |g, v| {
                let l = g.log_abs(v[0]);
                Ok(g.sum(l))
            },
            &[Tensor::vector(vec![0.5, -2.0, 3.0])],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }
}
