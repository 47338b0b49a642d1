//! Named parameter collections and their gradients.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::tensor::Tensor;

/// Which network a parameter collection belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Encoder,
    Decoder,
    Aux,
    Flow,
    MetricAux,
}

/// Named tensors with fixed shapes. Iteration order is the lexicographic
/// order of names, which keeps every reduction over parameters deterministic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    role: Role,
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new(role: Role) -> Self {
        Self {
            role,
            tensors: BTreeMap::new(),
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    /// Adds a parameter; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter `{name}`")));
        }
        self.tensors.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::contract(format!("missing parameter `{name}`")))
    }

    /// Replaces the value of an existing parameter; the shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .tensors
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("missing parameter `{name}`")))?;
        if slot.shape() != value.shape() {
            return Err(Error::shape(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub(crate) fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Puts every tensor on the graph, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(k, t)| {
                let v = if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                };
                (k.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    /// Uniform `±scale` initialisation for a new `[shape]` parameter.
    pub fn insert_uniform(&mut self, name: &str, shape: &[usize], scale: f64, rng: &mut impl Rng) -> Result<()> {
        let dist = Uniform::new_inclusive(-scale, scale);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn insert_zeros(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        self.insert(name, Tensor::zeros(shape))
    }

    /// Stable content digest over names, shapes and bit patterns.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (k, t) in &self.tensors {
            h.update(k.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// A [`ParamSet`] placed on a [`Graph`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Builds a binding from existing graph nodes.
    pub fn from_pairs(pairs: &[(&str, Var)]) -> Self {
        Self {
            vars: pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract(format!("parameter `{name}` not bound")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    /// Collects gradients for every bound parameter; parameters the loss does
    /// not reach get exact zeros.
    pub fn grads(&self, grads: &Gradients, params: &ParamSet) -> GradRecord {
        let tensors = self
            .vars
            .iter()
            .map(|(k, &v)| {
                let g = grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(params.tensors[k].shape()));
                (k.clone(), g)
            })
            .collect();
        GradRecord { tensors }
    }
}

/// Per-parameter gradients aligned by name with a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradRecord {
    tensors: BTreeMap<String, Tensor>,
}

impl GradRecord {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Self {
            tensors: params
                .tensors
                .iter()
                .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Checks names and shapes against `params`.
    pub fn check_aligned(&self, params: &ParamSet) -> Result<()> {
        if self.tensors.len() != params.tensors.len() {
            return Err(Error::contract("gradient record and parameters differ in size"));
        }
        for (k, t) in &params.tensors {
            match self.tensors.get(k) {
                Some(g) if g.shape() == t.shape() => {}
                Some(g) => {
                    return Err(Error::contract(format!(
                        "gradient `{k}` has shape {:?}, parameter {:?}",
                        g.shape(),
                        t.shape()
                    )))
                }
                None => return Err(Error::contract(format!("no gradient for `{k}`"))),
            }
        }
        Ok(())
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .values()
            .flat_map(|t| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        for t in self.tensors.values_mut() {
            for v in t.data_mut() {
                *v *= c;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .values()
            .flat_map(|t| t.data())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Rescales several gradient records jointly so their combined norm is at
/// most `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(records: &mut [&mut GradRecord], max_norm: f64) -> f64 {
    let norm = records
        .iter()
        .map(|r| r.global_norm().powi(2))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let c = max_norm / norm;
        for r in records.iter_mut() {
            r.scale(c);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_shapes_fixed() {
        let mut p = ParamSet::new(Role::Encoder);
        p.insert_zeros("w", &[2, 3]).unwrap();
        assert!(p.insert_zeros("w", &[1]).is_err());
        assert!(p.set("w", Tensor::zeros(&[3, 2])).is_err());
        assert!(p.set("w", Tensor::full(&[2, 3], 1.0)).is_ok());
    }

    #[test]
    fn clipping_scales_jointly() {
        let mut p = ParamSet::new(Role::Decoder);
        p.insert("a", Tensor::vector(vec![3.0])).unwrap();
        let mut g1 = GradRecord::zeros_like(&p);
        g1.tensors.get_mut("a").unwrap().data_mut()[0] = 3.0;
        let mut g2 = g1.clone();
        g2.tensors.get_mut("a").unwrap().data_mut()[0] = 4.0;
        let n = clip_global_norm(&mut [&mut g1, &mut g2], 1.0);
        assert!((n - 5.0).abs() < 1e-12);
        assert!((g1.get("a").unwrap().item() - 0.6).abs() < 1e-12);
        assert!((g2.get("a").unwrap().item() - 0.8).abs() < 1e-12);
    }
}
