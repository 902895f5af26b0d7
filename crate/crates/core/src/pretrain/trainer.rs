//! Multi-task pretraining: batch assembly, summed objectives, Adam updates.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::losses::{mc_qt_two_part_loss, mcqt_loss, mlm_loss, so_loss, tfidf_loss};
use super::optim::{clip_grad_norm, Adam, WarmupSchedule};
use crate::encoder::{encode, init_encoder_params, BoundParams, ModelConfig, ParamSet};
use crate::error::{Error, Result};
use crate::numkernel::{Graph, Tensor, Var};
use crate::rng::{stream, Rng};
use crate::textpipe::{
    apply_mlm_masking, apply_sentence_order_swap, compute_tfidf_targets, sample_contrastive_batch, BatchMode,
    ContrastiveBatch, Document, TfidfTable,
};

pub const CLIP_NORM: f64 = 1.0;
pub const LOG_HEADER: &str = "step\ttotal\tmcqt\tmlm\tso\ttfidf\tgrad_norm";
const RUNNING_DECAY: f64 = 0.99;

/// Pretraining hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_ratio: f64,
    pub mask_prob: f64,
    pub swap_prob: f64,
    pub mode: BatchMode,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 12,
            lr: 2e-4,
            warmup_ratio: 0.001,
            mask_prob: 0.15,
            swap_prob: 0.5,
            mode: BatchMode::ThreePart,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        let parts = self.mode.parts();
        if self.batch_size == 0 || !self.batch_size.is_multiple_of(parts) {
            return Err(Error::Config(format!(
                "batch_size {} must be a positive multiple of {parts}",
                self.batch_size
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(Error::Config(format!("warmup_ratio {} not in [0,1]", self.warmup_ratio)));
        }
        if !(0.0..1.0).contains(&self.mask_prob) {
            return Err(Error::Config(format!("mask_prob {} not in [0,1)", self.mask_prob)));
        }
        if !(0.0..=1.0).contains(&self.swap_prob) {
            return Err(Error::Config(format!("swap_prob {} not in [0,1]", self.swap_prob)));
        }
        Ok(())
    }
}

/// Unweighted value of every objective; inactive ones are 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub mcqt: f64,
    pub mlm: f64,
    pub so: f64,
    pub tfidf: f64,
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub total: f64,
    pub losses: LossValues,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

impl StepReport {
    pub fn tsv_line(&self) -> String {
        let l = &self.losses;
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.step, self.total, l.mcqt, l.mlm, l.so, l.tfidf, self.grad_norm
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainState {
    pub step: u64,
    pub adam: Adam,
    /// Exponential moving averages of each objective.
    pub running: LossValues,
    pub running_total: f64,
    pub seed: u64,
}

impl PretrainState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    fn record(&mut self, total: f64, l: &LossValues) {
        let ema = |old: f64, new: f64, first: bool| if first { new } else { RUNNING_DECAY * old + (1.0 - RUNNING_DECAY) * new };
        let first = self.step == 1;
        self.running_total = ema(self.running_total, total, first);
        self.running.mcqt = ema(self.running.mcqt, l.mcqt, first);
        self.running.mlm = ema(self.running.mlm, l.mlm, first);
        self.running.so = ema(self.running.so, l.so, first);
        self.running.tfidf = ema(self.running.tfidf, l.tfidf, first);
    }
}

/// Graph nodes of the summed objective.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveVars {
    pub total: Var,
    pub mcqt: Option<Var>,
    pub mlm: Option<Var>,
    pub so: Option<Var>,
    pub tfidf: Option<Var>,
}

/// `(row, pos, value)` for every non-special position of `batch`.
pub fn tfidf_positions(batch: &ContrastiveBatch, targets: &[Vec<f64>]) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for (r, row) in batch.clean_ids.iter().enumerate() {
        for (p, &id) in row.iter().enumerate() {
            if !batch.is_special(id) {
                out.push((r, p, targets[r][p]));
            }
        }
    }
    out
}

/// Contrastive loss on `[B, K, D]` embeddings laid out in `mode` parts.
pub fn contrastive_loss(g: &mut Graph, cls: Var, mode: BatchMode, lambda: f64) -> Result<Var> {
    let b = g.shape(cls)[0];
    let n = b / mode.parts();
    match mode {
        BatchMode::ThreePart => {
            let p1 = g.slice(cls, 0, 0, n)?;
            let p2 = g.slice(cls, 0, n, n)?;
            let p3 = g.slice(cls, 0, 2 * n, n)?;
            mcqt_loss(g, p1, p2, p3, lambda)
        }
        BatchMode::TwoPart => {
            let p1 = g.slice(cls, 0, 0, n)?;
            let p2 = g.slice(cls, 0, n, n)?;
            mc_qt_two_part_loss(g, p1, p2, lambda)
        }
    }
}

/// Build every objective with a nonzero weight and their weighted sum.
pub fn build_objectives(
    g: &mut Graph,
    p: &BoundParams,
    cfg: &ModelConfig,
    batch: &ContrastiveBatch,
    tfidf_targets: &[Vec<f64>],
    dropout: Option<&mut Rng>,
) -> Result<ObjectiveVars> {
    if batch.k != cfg.k {
        return Err(Error::Config(format!("batch built for K={} but model has K={}", batch.k, cfg.k)));
    }
    let w = cfg.loss_weights;
    let out = encode(g, p, cfg, &batch.token_ids, dropout)?;
    let mut terms = Vec::new();
    let mut vars = ObjectiveVars {
        total: out.so_embedding,
        mcqt: None,
        mlm: None,
        so: None,
        tfidf: None,
    };
    if w.mcqt != 0.0 {
        let l = contrastive_loss(g, out.cls_embeddings, batch.mode, cfg.lambda)?;
        vars.mcqt = Some(l);
        terms.push(g.scale(l, w.mcqt));
    }
    if w.mlm != 0.0 {
        let o = mlm_loss(g, out.token_hidden, &batch.mlm_targets, p.var("tok_emb")?)?;
        if o.active {
            vars.mlm = Some(o.loss);
            terms.push(g.scale(o.loss, w.mlm));
        }
    }
    if w.so != 0.0 {
        let l = so_loss(g, out.so_embedding, &batch.so_labels, p.var("so_cls.weight")?, p.var("so_cls.bias")?)?;
        vars.so = Some(l);
        terms.push(g.scale(l, w.so));
    }
    if w.tfidf != 0.0 {
        let pos = tfidf_positions(batch, tfidf_targets);
        let o = tfidf_loss(g, out.token_hidden, &pos, p.var("tfidf.weight")?, p.var("tfidf.bias")?)?;
        if o.active {
            vars.tfidf = Some(o.loss);
            terms.push(g.scale(o.loss, w.tfidf));
        }
    }
    vars.total = match terms.split_first() {
        None => g.constant(Tensor::scalar(0.0)),
        Some((&first, rest)) => {
            let mut acc = first;
            for &t in rest {
                acc = g.add(acc, t)?;
            }
            acc
        }
    };
    Ok(vars)
}

/// One optimizer step on a prepared batch.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_step(
    params: &mut ParamSet,
    state: &mut PretrainState,
    batch: &ContrastiveBatch,
    tfidf_targets: &[Vec<f64>],
    cfg: &ModelConfig,
    hp: &PretrainConfig,
    dropout: &mut Rng,
) -> Result<StepReport> {
    if batch.mode != hp.mode {
        return Err(Error::Config(format!(
            "batch mode {:?} does not match configured mode {:?}",
            batch.mode, hp.mode
        )));
    }
    let step = state.step + 1;
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let vars = build_objectives(&mut g, &bound, cfg, batch, tfidf_targets, Some(dropout))?;

    let value = |v: Option<Var>| v.map(|v| g.value(v).item()).unwrap_or(0.0);
    let losses = LossValues {
        mcqt: value(vars.mcqt),
        mlm: value(vars.mlm),
        so: value(vars.so),
        tfidf: value(vars.tfidf),
    };
    for (objective, v) in [("mcqt", losses.mcqt), ("mlm", losses.mlm), ("so", losses.so), ("tfidf", losses.tfidf)] {
        if !v.is_finite() {
            return Err(Error::NonFinite { objective, step, value: v });
        }
    }
    let total = g.value(vars.total).item();
    if !total.is_finite() {
        return Err(Error::NonFinite {
            objective: "total",
            step,
            value: total,
        });
    }

    g.backward(vars.total)?;
    let mut grads = bound.grads(&g);
    let grad_norm = clip_grad_norm(&mut grads, CLIP_NORM);
    if !grad_norm.is_finite() {
        return Err(Error::NonFinite {
            objective: "grad_norm",
            step,
            value: grad_norm,
        });
    }
    let lr = WarmupSchedule::new(hp.lr, hp.warmup_ratio, hp.steps).lr(step);
    state.adam.step(params, &grads, lr)?;
    state.step = step;
    state.record(total, &losses);
    Ok(StepReport {
        step,
        total,
        losses,
        grad_norm,
    })
}

/// Owns the corpus view and the named random streams of one pretraining run.
pub struct Pretrainer<'a> {
    docs: &'a [Document],
    table: TfidfTable,
    cfg: ModelConfig,
    hp: PretrainConfig,
    batch_rng: Rng,
    swap_rng: Rng,
    mask_rng: Rng,
    dropout_rng: Rng,
}

impl<'a> Pretrainer<'a> {
    pub fn new(docs: &'a [Document], cfg: ModelConfig, hp: PretrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        hp.validate()?;
        if docs.is_empty() {
            return Err(Error::Config("pretraining corpus is empty".into()));
        }
        let table = TfidfTable::build(docs, cfg.vocab_size);
        Ok(Self {
            docs,
            table,
            cfg,
            hp,
            batch_rng: stream(seed, "pretrain/batch"),
            swap_rng: stream(seed, "pretrain/swap"),
            mask_rng: stream(seed, "pretrain/mask"),
            dropout_rng: stream(seed, "pretrain/dropout"),
        })
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Sample, swap and mask the next batch.
    pub fn next_batch(&mut self) -> Result<ContrastiveBatch> {
        let mut batch = sample_contrastive_batch(
            self.docs,
            self.cfg.k,
            self.hp.batch_size,
            self.cfg.max_len,
            self.hp.mode,
            &mut self.batch_rng,
        )?;
        apply_sentence_order_swap(&mut batch, self.hp.swap_prob, &mut self.swap_rng)?;
        if self.hp.mask_prob > 0.0 {
            apply_mlm_masking(&mut batch, self.hp.mask_prob, self.cfg.vocab_size, &mut self.mask_rng)?;
        }
        Ok(batch)
    }

    pub fn step(&mut self, params: &mut ParamSet, state: &mut PretrainState) -> Result<StepReport> {
        let batch = self.next_batch()?;
        let targets = compute_tfidf_targets(&batch, &self.table);
        pretrain_step(params, state, &batch, &targets, &self.cfg, &self.hp, &mut self.dropout_rng)
    }

    /// Run the configured number of steps, writing one log line per step.
    pub fn run(
        &mut self,
        params: &mut ParamSet,
        state: &mut PretrainState,
        mut log: Option<&mut dyn Write>,
    ) -> Result<Vec<StepReport>> {
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{LOG_HEADER}")?;
        }
        let mut reports = Vec::with_capacity(self.hp.steps as usize);
        while state.step < self.hp.steps {
            let r = self.step(params, state)?;
            if let Some(w) = log.as_deref_mut() {
                writeln!(w, "{}", r.tsv_line())?;
            }
            if r.step % 100 == 0 {
                log::debug!("step {} total {:.4}", r.step, state.running_total);
            }
            reports.push(r);
        }
        Ok(reports)
    }
}

/// Initialize parameters from `seed` and pretrain them on `docs`.
pub fn pretrain(
    docs: &[Document],
    cfg: &ModelConfig,
    hp: &PretrainConfig,
    seed: u64,
    log: Option<&mut dyn Write>,
) -> Result<(ParamSet, PretrainState, Vec<StepReport>)> {
    let mut params = init_encoder_params(cfg, &mut stream(seed, "pretrain/init"))?;
    let mut state = PretrainState::new(seed);
    let mut trainer = Pretrainer::new(docs, cfg.clone(), hp.clone(), seed)?;
    let reports = trainer.run(&mut params, &mut state, log)?;
    Ok((params, state, reports))
}
