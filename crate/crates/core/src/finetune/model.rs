use std::collections::BTreeMap;

use super::aggregate::{facet_outputs, Aggregation};
use super::task::TaskKind;
use crate::checkpoint::Checkpoint;
use crate::encoder::{encode, BoundParams, ModelConfig, ParamSet};
use crate::error::{Error, Result};
use crate::numkernel::{Graph, Tensor, Var};
use crate::rng::Rng;

pub const AGG_WEIGHT: &str = "head_mc.weight";
pub const CLF_WEIGHT: &str = "clf.weight";
pub const CLF_BIAS: &str = "clf.bias";
const CLF_INIT_STD: f64 = 0.02;

/// Encoder, aggregation matrices `W_{O,k}` (`head_mc.weight`) and classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct FinetunedModel {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub aggregation: Aggregation,
    pub kind: TaskKind,
}

/// Graph nodes of one classifier pass.
#[derive(Clone, Copy, Debug)]
pub struct HeadOutput {
    /// `[B, K, D]` final CLS states.
    pub cls_hidden: Var,
    /// `[B, K, D]` per-facet transforms before summing.
    pub facets: Var,
    /// `[B, C]` logits or `[B, 1]` regression outputs.
    pub outputs: Var,
}

impl FinetunedModel {
    /// Pretrained encoder plus a freshly initialized classifier.
    pub fn from_pretrained(ckpt: &Checkpoint, kind: TaskKind, aggregation: Aggregation, rng: &mut Rng) -> Result<Self> {
        aggregation.check(ckpt.config.k)?;
        let mut params = ckpt.params.clone();
        params.get(AGG_WEIGHT)?;
        let d = ckpt.config.d_model;
        let c = kind.outputs();
        params.insert(CLF_WEIGHT, Tensor::randn(&[d, c], CLF_INIT_STD, rng));
        params.insert(CLF_BIAS, Tensor::zeros(&[c]));
        Ok(Self {
            config: ckpt.config.clone(),
            params,
            aggregation,
            kind,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &BoundParams, rows: &[Vec<u32>], dropout: Option<&mut Rng>) -> Result<HeadOutput> {
        let out = encode(g, p, &self.config, rows, dropout)?;
        let facets = facet_outputs(g, out.cls_hidden, p.var(AGG_WEIGHT)?, self.aggregation)?;
        let c = g.sum_axis(facets, 1)?;
        let y = g.matmul(c, p.var(CLF_WEIGHT)?)?;
        let outputs = g.add_trailing(y, p.var(CLF_BIAS)?)?;
        Ok(HeadOutput {
            cls_hidden: out.cls_hidden,
            facets,
            outputs,
        })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut meta = BTreeMap::new();
        meta.insert("aggregation".into(), self.aggregation.name().into());
        meta.insert("task_kind".into(), serde_json::to_string(&self.kind)?);
        Ok(Checkpoint {
            config: self.config.clone(),
            params: self.params.clone(),
            meta,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let field = |k: &str| {
            ckpt.meta
                .get(k)
                .ok_or_else(|| Error::Format(format!("checkpoint has no {k}; is it a fine-tuned model?")))
        };
        let aggregation: Aggregation = field("aggregation")?.parse()?;
        let kind: TaskKind = serde_json::from_str(field("task_kind")?)?;
        ckpt.params.get(CLF_WEIGHT)?;
        Ok(Self {
            config: ckpt.config.clone(),
            params: ckpt.params.clone(),
            aggregation,
            kind,
        })
    }

    /// `max_k ‖W_k − mean W‖_F` over the aggregation matrices.
    pub fn facet_spread(&self) -> Result<f64> {
        facet_spread(self.params.get(AGG_WEIGHT)?)
    }
}

/// `max_k ‖W_k − mean_{k'} W_{k'}‖_F` for a `[K, …]` stack.
pub fn facet_spread(w: &Tensor) -> Result<f64> {
    let k = w.shape()[0];
    let stride = w.len() / k;
    let mut best = 0.0f64;
    for i in 0..k {
        let mut sq = 0.0;
        for j in 0..stride {
            let first = w.data()[j];
            let mean = first + (0..k).map(|kk| w.data()[kk * stride + j] - first).sum::<f64>() / k as f64;
            let d = w.data()[i * stride + j] - mean;
            sq += d * d;
        }
        best = best.max(sq.sqrt());
    }
    Ok(best)
}
