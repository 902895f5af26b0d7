use std::collections::BTreeMap;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numkernel::{Graph, Tensor, Var};
use crate::rng::Rng;

const INIT_STD: f64 = 0.02;
/// Noise on the identity of inserted layers. At 0.02 the facets leave the
/// shared path too slowly to stay apart on toy corpora.
const INSERT_INIT_STD: f64 = 0.2;

/// Named parameter arrays in deterministic (sorted) order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
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

    pub fn num_elements(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Register every array as a trainable leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|(n, t)| (n.clone(), g.param(t.clone())))
            .collect();
        BoundParams { vars }
    }

    /// Register every array as a constant (inference).
    pub fn bind_frozen(&self, g: &mut Graph) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|(n, t)| (n.clone(), g.constant(t.clone())))
            .collect();
        BoundParams { vars }
    }
}

/// Graph handles for a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Gradients by name after `g.backward`.
    pub fn grads(&self, g: &Graph) -> BTreeMap<String, Vec<f64>> {
        self.vars
            .iter()
            .map(|(n, &v)| {
                let grad = g
                    .grad(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; g.value(v).len()]);
                (n.clone(), grad)
            })
            .collect()
    }
}

/// `K` copies of the identity plus Gaussian noise, shaped `[K, D, D]`.
fn identity_stack(k: usize, d: usize, std: f64, rng: &mut Rng) -> Tensor {
    let mut t = Tensor::randn(&[k, d, d], std, rng);
    for kk in 0..k {
        for i in 0..d {
            t.data_mut()[kk * d * d + i * d + i] += 1.0;
        }
    }
    t
}

/// Fresh encoder parameters.
///
/// Dense weights are stored `[in, out]` and applied as `x · W`. The per-CLS
/// stacks `insert.{l}.weight` and `head_mc.weight` are `[K, out, in]` so that
/// slice `k` is the matrix `W_k` acting on a column vector.
pub fn init_encoder_params(cfg: &ModelConfig, rng: &mut Rng) -> Result<ParamSet> {
    cfg.validate()?;
    let (d, k) = (cfg.d_model, cfg.k);
    let mut p = ParamSet::new();
    p.insert("tok_emb", Tensor::randn(&[cfg.vocab_size, d], INIT_STD, rng));
    p.insert("pos_emb", Tensor::randn(&[cfg.max_len, d], INIT_STD, rng));
    for l in 1..=cfg.n_layers {
        let pre = format!("layer{l}");
        p.insert(format!("{pre}.ln1.gain"), Tensor::full(&[d], 1.0));
        p.insert(format!("{pre}.ln1.bias"), Tensor::zeros(&[d]));
        for w in ["wq", "wk", "wv", "wo"] {
            p.insert(format!("{pre}.attn.{w}"), Tensor::randn(&[d, d], INIT_STD, rng));
        }
        for b in ["bq", "bk", "bv", "bo"] {
            p.insert(format!("{pre}.attn.{b}"), Tensor::zeros(&[d]));
        }
        p.insert(format!("{pre}.ln2.gain"), Tensor::full(&[d], 1.0));
        p.insert(format!("{pre}.ln2.bias"), Tensor::zeros(&[d]));
        p.insert(format!("{pre}.ffn.w1"), Tensor::randn(&[d, cfg.d_ff], INIT_STD, rng));
        p.insert(format!("{pre}.ffn.b1"), Tensor::zeros(&[cfg.d_ff]));
        p.insert(format!("{pre}.ffn.w2"), Tensor::randn(&[cfg.d_ff, d], INIT_STD, rng));
        p.insert(format!("{pre}.ffn.b2"), Tensor::zeros(&[d]));
    }
    p.insert("final_ln.gain", Tensor::full(&[d], 1.0));
    p.insert("final_ln.bias", Tensor::zeros(&[d]));
    for &l in &cfg.insert_layers {
        p.insert(format!("insert{l}.weight"), identity_stack(k, d, INSERT_INIT_STD, rng));
        p.insert(format!("insert{l}.bias"), Tensor::zeros(&[k, d]));
    }
    p.insert("head_mc.weight", identity_stack(k, d, INIT_STD, rng));
    p.insert("so_proj.weight", Tensor::randn(&[k * d, d], INIT_STD, rng));
    p.insert("so_proj.bias", Tensor::zeros(&[d]));
    p.insert("so_cls.weight", Tensor::randn(&[d, 2], INIT_STD, rng));
    p.insert("so_cls.bias", Tensor::zeros(&[2]));
    p.insert("tfidf.weight", Tensor::randn(&[d, 1], INIT_STD, rng));
    p.insert("tfidf.bias", Tensor::zeros(&[1]));
    Ok(p)
}
