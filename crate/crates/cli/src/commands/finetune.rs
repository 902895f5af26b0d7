use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use mcls_core::analysis::write_records;
use mcls_core::checkpoint::{write_atomic, Checkpoint};
use mcls_core::finetune::{
    dropout_ensemble_predict, finetune, predict_with_uncertainty, Aggregation, FinetunedModel, TaskFile,
};

use super::{load_config, load_vocab};
use crate::{metrics_path, predictions_path, vocab_path, CmdResult, Failure};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AggregationArg {
    Reparam,
    Sum,
    K1,
}

impl From<AggregationArg> for Aggregation {
    fn from(a: AggregationArg) -> Self {
        match a {
            AggregationArg::Reparam => Aggregation::Reparam,
            AggregationArg::Sum => Aggregation::Sum,
            AggregationArg::K1 => Aggregation::K1,
        }
    }
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Pretrained checkpoint (its `.vocab` sidecar must exist).
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Task file; defaults to `paths.task` of the config.
    #[arg(long)]
    pub task: Option<PathBuf>,
    /// Fine-tuned model to write; metrics and predictions go next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "reparam")]
    pub aggregation: AggregationArg,
}

fn task_path(flag: Option<PathBuf>, fallback: Option<PathBuf>) -> CmdResult<PathBuf> {
    flag.or(fallback)
        .ok_or_else(|| Failure::Usage("no task file given (--task or paths.task)".into()))
}

fn copy_vocab(from: &Path, to: &Path) -> CmdResult {
    let text = std::fs::read(vocab_path(from))?;
    write_atomic(&vocab_path(to), &text)?;
    Ok(())
}

pub fn run(a: FinetuneArgs) -> CmdResult {
    let cfg = load_config(&a.config)?;
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let aggregation = Aggregation::from(a.aggregation);
    aggregation.check(ckpt.config.k)?;
    let vocab = load_vocab(&a.ckpt, ckpt.config.k)?;
    let task = TaskFile::load(&task_path(a.task, cfg.paths.task.clone())?)?.encode(&vocab)?;

    let outcome = finetune(&ckpt, &task, aggregation, &cfg.finetune, cfg.seeds.finetune)?;
    let hash = cfg.content_hash()?;
    let mut metrics = format!("# config_sha256 {hash}\nstep\ttrain_loss\tdev_metric\n");
    for p in &outcome.history {
        let _ = writeln!(metrics, "{}\t{}\t{}", p.step, p.train_loss, p.metric);
    }
    let records = predict_with_uncertainty(&outcome.model, &task.train, &task.dev)?;

    let mut out = outcome.model.to_checkpoint()?;
    out.meta.insert("config_sha256".into(), hash);
    out.meta.insert("best_step".into(), outcome.best.step.to_string());
    out.save(&a.out)?;
    copy_vocab(&a.ckpt, &a.out)?;
    write_atomic(&metrics_path(&a.out), metrics.as_bytes())?;
    write_records(&predictions_path(&a.out), &records)?;
    println!(
        "best dev {:?} {:.4} at step {}; wrote {}",
        task.metric,
        outcome.best.metric,
        outcome.best.step,
        a.out.display()
    );
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Dev,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Fine-tuned model written by `mcls finetune`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub task: PathBuf,
    /// Prediction file to write (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "dev")]
    pub split: Split,
    /// Average this many forward passes with dropout on instead of one clean pass.
    #[arg(long)]
    pub dropout_seeds: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run_predict(a: PredictArgs) -> CmdResult {
    let model = FinetunedModel::from_checkpoint(&Checkpoint::load(&a.model)?)?;
    let vocab = load_vocab(&a.model, model.config.k)?;
    let task = TaskFile::load(&a.task)?.encode(&vocab)?;
    let examples = match a.split {
        Split::Train => &task.train,
        Split::Dev => &task.dev,
    };
    let records = match a.dropout_seeds {
        Some(n) => dropout_ensemble_predict(&model, examples, n, a.seed)?,
        None => predict_with_uncertainty(&model, &task.train, examples)?,
    };
    write_records(&a.out, &records)?;
    println!("wrote {} predictions to {}", records.len(), a.out.display());
    Ok(())
}
