use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::aggregate::Aggregation;
use super::metrics::score;
use super::model::FinetunedModel;
use super::predict::predict;
use super::task::{build_rows, Example, TaskKind, TaskSpec};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::numkernel::{Graph, Tensor};
use crate::pretrain::{clip_grad_norm, Adam, WarmupSchedule, CLIP_NORM};
use crate::rng::{stream, Rng};

fn default_eval_every() -> u64 {
    20
}

fn default_warmup() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    #[serde(default = "default_warmup")]
    pub warmup_ratio: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            batch_size: 16,
            lr: 1e-3,
            patience: 10,
            eval_every: default_eval_every(),
            warmup_ratio: default_warmup(),
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_every == 0 || self.patience == 0 {
            return Err(Error::Config("finetune batch_size, eval_every and patience must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("finetune lr {} must be positive", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(Error::Config(format!("warmup_ratio {} not in [0,1]", self.warmup_ratio)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: u64,
    pub train_loss: f64,
    pub metric: f64,
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    /// Parameters at the best dev evaluation.
    pub model: FinetunedModel,
    pub history: Vec<EvalPoint>,
    pub best: EvalPoint,
}

/// Dev metric of `model` on `examples`.
pub fn evaluate(model: &FinetunedModel, task: &TaskSpec, examples: &[Example]) -> Result<f64> {
    let recs = predict(model, examples)?;
    let outputs: Vec<Vec<f64>> = recs.into_iter().map(|r| r.probs).collect();
    let gold: Vec<f64> = examples.iter().map(|e| e.label).collect();
    Ok(score(task.metric, &outputs, &gold))
}

/// One optimizer step on `batch`; returns the training loss.
fn train_step(
    model: &mut FinetunedModel,
    adam: &mut Adam,
    batch: &[&Example],
    lr: f64,
    step: u64,
    dropout: &mut Rng,
) -> Result<f64> {
    let rows = build_rows(batch, model.config.k, model.config.max_len)?;
    let mut g = Graph::new();
    let p = model.params.bind(&mut g);
    let head = model.forward(&mut g, &p, &rows, Some(dropout))?;
    let loss = match model.kind {
        TaskKind::Classification { .. } => {
            let labels: Vec<usize> = batch.iter().map(|e| e.label as usize).collect();
            g.softmax_cross_entropy(head.outputs, &labels)?
        }
        TaskKind::Regression => {
            let gold: Vec<f64> = batch.iter().map(|e| e.label).collect();
            let gold = g.constant(Tensor::new(vec![batch.len(), 1], gold)?);
            let diff = g.sub(head.outputs, gold)?;
            let sq = g.mul(diff, diff)?;
            g.mean_all(sq)
        }
    };
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite {
            objective: "finetune",
            step,
            value,
        });
    }
    g.backward(loss)?;
    let mut grads = p.grads(&g);
    clip_grad_norm(&mut grads, CLIP_NORM);
    adam.step(&mut model.params, &grads, lr)?;
    Ok(value)
}

/// Fine-tune a pretrained checkpoint with early stopping on the dev metric.
///
/// The dev set is scored before training and every `eval_every` steps; the
/// parameters of the best evaluation (earliest on ties) are returned.
pub fn finetune(
    ckpt: &Checkpoint,
    task: &TaskSpec,
    aggregation: Aggregation,
    hp: &FinetuneConfig,
    seed: u64,
) -> Result<FinetuneOutcome> {
    hp.validate()?;
    task.validate()?;
    if task.train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut model = FinetunedModel::from_pretrained(ckpt, task.kind, aggregation, &mut stream(seed, "finetune/init"))?;
    let mut order_rng = stream(seed, "finetune/batch");
    let mut dropout_rng = stream(seed, "finetune/dropout");
    let schedule = WarmupSchedule::new(hp.lr, hp.warmup_ratio, hp.steps);
    let mut adam = Adam::new();

    let first = EvalPoint {
        step: 0,
        train_loss: f64::NAN,
        metric: evaluate(&model, task, &task.dev)?,
    };
    let mut history = vec![first];
    let mut best = first;
    let mut best_model = model.clone();
    let mut stale = 0;

    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut running = 0.0;
    let mut seen = 0usize;
    for step in 1..=hp.steps {
        let mut batch = Vec::with_capacity(hp.batch_size);
        while batch.len() < hp.batch_size.min(task.train.len()) {
            if cursor == order.len() {
                order = (0..task.train.len()).collect();
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            batch.push(&task.train[order[cursor]]);
            cursor += 1;
        }
        running += train_step(&mut model, &mut adam, &batch, schedule.lr(step), step, &mut dropout_rng)?;
        seen += 1;

        if step % hp.eval_every == 0 || step == hp.steps {
            let point = EvalPoint {
                step,
                train_loss: running / seen as f64,
                metric: evaluate(&model, task, &task.dev)?,
            };
            running = 0.0;
            seen = 0;
            log::debug!("finetune step {step} loss {:.4} dev {:.4}", point.train_loss, point.metric);
            history.push(point);
            if point.metric > best.metric {
                best = point;
                best_model = model.clone();
                stale = 0;
            } else {
                stale += 1;
                if stale >= hp.patience {
                    break;
                }
            }
        }
    }
    Ok(FinetuneOutcome {
        model: best_model,
        history,
        best,
    })
}
