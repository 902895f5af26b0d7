//! Inference: predictions, per-CLS probabilities, ensembles and SWA.

use serde::{Deserialize, Serialize};

use super::model::FinetunedModel;
use super::task::{build_rows, Example, TaskKind};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::numkernel::{softmax_in_place, Graph, Tensor};
use crate::rng::{stream, Rng};

const CHUNK: usize = 32;

/// One line of a prediction file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: u64,
    pub gold: f64,
    /// Class probabilities, or the single regression output.
    pub probs: Vec<f64>,
    /// `[K][C]` probabilities from each CLS facet alone; empty when not computed.
    #[serde(default)]
    pub cls_probs: Vec<Vec<f64>>,
    /// Mean over classes of the variance of `cls_probs` across facets.
    #[serde(default)]
    pub uncertainty: f64,
    /// `[K][D]` final CLS states.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cls_hidden: Option<Vec<Vec<f64>>>,
}

struct Pass {
    outputs: Tensor,
    cls_hidden: Tensor,
    facets: Tensor,
}

fn run_pass(model: &FinetunedModel, examples: &[&Example], dropout: Option<&mut Rng>) -> Result<Pass> {
    let rows = build_rows(examples, model.config.k, model.config.max_len)?;
    let mut g = Graph::new();
    let p = model.params.bind_frozen(&mut g);
    let h = model.forward(&mut g, &p, &rows, dropout)?;
    Ok(Pass {
        outputs: g.value(h.outputs).clone(),
        cls_hidden: g.value(h.cls_hidden).clone(),
        facets: g.value(h.facets).clone(),
    })
}

fn to_probs(kind: TaskKind, row: &[f64]) -> Vec<f64> {
    let mut v = row.to_vec();
    if matches!(kind, TaskKind::Classification { .. }) {
        softmax_in_place(&mut v);
    }
    v
}

fn nested(t: &Tensor, i: usize) -> Vec<Vec<f64>> {
    let s = t.shape();
    t.row(i).chunks(s[2]).map(<[f64]>::to_vec).collect()
}

fn predict_with(model: &FinetunedModel, examples: &[Example], mut dropout: Option<&mut Rng>) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(CHUNK) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let pass = run_pass(model, &refs, dropout.as_deref_mut())?;
        for (i, ex) in chunk.iter().enumerate() {
            out.push(PredictionRecord {
                id: ex.id,
                gold: ex.label,
                probs: to_probs(model.kind, pass.outputs.row(i)),
                cls_probs: Vec::new(),
                uncertainty: 0.0,
                cls_hidden: Some(nested(&pass.cls_hidden, i)),
            });
        }
    }
    Ok(out)
}

/// Deterministic predictions (dropout off).
pub fn predict(model: &FinetunedModel, examples: &[Example]) -> Result<Vec<PredictionRecord>> {
    predict_with(model, examples, None)
}

/// Per-facet probabilities `[K][C]` and their uncertainty for one example.
#[derive(Clone, Debug, PartialEq)]
pub struct FacetProbs {
    pub probs: Vec<Vec<f64>>,
    pub uncertainty: f64,
}

/// Mean over classes of the population variance across facets.
pub fn facet_uncertainty(probs: &[Vec<f64>]) -> f64 {
    let k = probs.len() as f64;
    let c = probs[0].len();
    let mut total = 0.0;
    for l in 0..c {
        let mean = probs.iter().map(|p| p[l]).sum::<f64>() / k;
        total += probs.iter().map(|p| (p[l] - mean).powi(2)).sum::<f64>() / k;
    }
    total / c as f64
}

fn facets_of(model: &FinetunedModel, examples: &[Example]) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(CHUNK) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let pass = run_pass(model, &refs, None)?;
        for i in 0..chunk.len() {
            out.push(nested(&pass.facets, i));
        }
    }
    Ok(out)
}

/// Classify with each facet alone against class centroids.
///
/// The centroid `q[l][k]` is the mean facet-`k` output over training examples
/// of class `l`; facet `k` of `x` scores class `l` by `q[l][k] · f_k(x)` and
/// the scores go through a softmax over classes.
pub fn per_cls_probabilities(model: &FinetunedModel, train: &[Example], eval: &[Example]) -> Result<Vec<FacetProbs>> {
    let Some(classes) = model.kind.classes() else {
        return Err(Error::Config("per-CLS probabilities need a classification task".into()));
    };
    let (k, d) = (model.config.k, model.config.d_model);
    let mut centroid = vec![vec![vec![0.0; d]; k]; classes];
    let mut counts = vec![0usize; classes];
    for (ex, f) in train.iter().zip(facets_of(model, train)?) {
        let l = ex.label as usize;
        if l >= classes {
            return Err(Error::Input(format!("example {} has label {} outside 0..{classes}", ex.id, ex.label)));
        }
        counts[l] += 1;
        for kk in 0..k {
            for (q, v) in centroid[l][kk].iter_mut().zip(&f[kk]) {
                *q += v;
            }
        }
    }
    for (l, &n) in counts.iter().enumerate() {
        if n == 0 {
            return Err(Error::Estimation(format!("class {l} has no training examples")));
        }
        for q in centroid[l].iter_mut().flatten() {
            *q /= n as f64;
        }
    }
    let mut out = Vec::with_capacity(eval.len());
    for f in facets_of(model, eval)? {
        let probs: Vec<Vec<f64>> = (0..k)
            .map(|kk| {
                let mut s: Vec<f64> = (0..classes)
                    .map(|l| centroid[l][kk].iter().zip(&f[kk]).map(|(a, b)| a * b).sum())
                    .collect();
                softmax_in_place(&mut s);
                s
            })
            .collect();
        let uncertainty = facet_uncertainty(&probs);
        out.push(FacetProbs { probs, uncertainty });
    }
    Ok(out)
}

/// [`predict`] plus per-CLS probabilities estimated from `train`.
pub fn predict_with_uncertainty(
    model: &FinetunedModel,
    train: &[Example],
    eval: &[Example],
) -> Result<Vec<PredictionRecord>> {
    let mut recs = predict(model, eval)?;
    if model.kind.classes().is_some() {
        for (r, f) in recs.iter_mut().zip(per_cls_probabilities(model, train, eval)?) {
            r.cls_probs = f.probs;
            r.uncertainty = f.uncertainty;
        }
    }
    Ok(recs)
}

/// Mean probabilities over `n_seeds` forward passes with dropout on. Pass `s`
/// draws its masks from the `finetune/ensemble/{s}` stream of `seed`.
pub fn dropout_ensemble_predict(
    model: &FinetunedModel,
    examples: &[Example],
    n_seeds: usize,
    seed: u64,
) -> Result<Vec<PredictionRecord>> {
    if n_seeds == 0 {
        return Err(Error::Config("dropout ensemble needs at least one seed".into()));
    }
    let mut acc: Option<Vec<PredictionRecord>> = None;
    for s in 0..n_seeds {
        let mut rng = stream(seed, &format!("finetune/ensemble/{s}"));
        let recs = predict_with(model, examples, Some(&mut rng))?;
        match acc.as_mut() {
            None => acc = Some(recs),
            Some(a) => {
                for (x, r) in a.iter_mut().zip(recs) {
                    x.probs.iter_mut().zip(&r.probs).for_each(|(p, q)| *p += q);
                }
            }
        }
    }
    let mut out = acc.expect("n_seeds > 0");
    if n_seeds > 1 {
        for r in &mut out {
            r.probs.iter_mut().for_each(|p| *p /= n_seeds as f64);
            r.cls_hidden = None;
        }
    }
    Ok(out)
}

/// Element-wise mean of every parameter array; configs must agree.
pub fn swa_average(ckpts: &[Checkpoint]) -> Result<Checkpoint> {
    let Some((first, rest)) = ckpts.split_first() else {
        return Err(Error::Input("weight averaging needs at least one checkpoint".into()));
    };
    let mut out = first.clone();
    for c in rest {
        if c.config != first.config {
            return Err(Error::Input("checkpoints have different model configs".into()));
        }
        let names_a: Vec<&str> = first.params.names().collect();
        let names_b: Vec<&str> = c.params.names().collect();
        if names_a != names_b {
            return Err(Error::Input("checkpoints hold different parameter sets".into()));
        }
        for (name, t) in c.params.iter() {
            let dst = out.params.get_mut(name)?;
            t.check_same_shape(dst, "swa_average")?;
            dst.data_mut().iter_mut().zip(t.data()).for_each(|(a, b)| *a += b);
        }
    }
    let n = ckpts.len() as f64;
    for (_, t) in out.params.iter_mut() {
        t.data_mut().iter_mut().for_each(|a| *a /= n);
    }
    Ok(out)
}
