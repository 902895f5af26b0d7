use std::path::PathBuf;

use clap::Args;
use mcls_core::config::RunConfig;
use mcls_core::checkpoint::write_atomic;
use mcls_core::encoder::ModelConfig;
use mcls_core::rng::stream;
use mcls_core::synth::{separable_task_file, synthetic_corpus, write_corpus, SynthCorpusConfig};

use crate::CmdResult;

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory for `corpus/corpus.txt`, `task.json` and `config.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub docs: usize,
}

/// A model small enough to pretrain on one CPU core in minutes.
pub fn small_model() -> ModelConfig {
    ModelConfig {
        k: 5,
        d_model: 32,
        n_layers: 3,
        n_heads: 2,
        d_ff: 64,
        insert_layers: vec![1, 2],
        vocab_size: 256,
        max_len: 24,
        ..ModelConfig::default()
    }
}

pub fn run(a: SynthArgs) -> CmdResult {
    let corpus_cfg = SynthCorpusConfig {
        n_docs: a.docs,
        ..SynthCorpusConfig::default()
    };
    let docs = synthetic_corpus(&corpus_cfg, &mut stream(a.seed, "synth/corpus"))?;
    let corpus_dir = a.out.join("corpus");
    write_corpus(&docs, &corpus_dir.join("corpus.txt"))?;
    let task = separable_task_file(&corpus_cfg, 100, 200, &mut stream(a.seed, "synth/task"))?;
    let task_path = a.out.join("task.json");
    task.save(&task_path)?;

    let mut cfg = RunConfig {
        model: small_model(),
        ..RunConfig::default()
    };
    cfg.paths.corpus = Some(corpus_dir);
    cfg.paths.task = Some(task_path);
    write_atomic(&a.out.join("config.json"), cfg.to_json()?.as_bytes())?;
    println!("wrote synthetic corpus, task and config to {}", a.out.display());
    Ok(())
}
