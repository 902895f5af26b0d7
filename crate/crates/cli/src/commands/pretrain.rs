use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::Args;
use mcls_core::checkpoint::{write_atomic, Checkpoint};
use mcls_core::pretrain::pretrain;
use mcls_core::textpipe::{encode_documents, read_corpus_dir, Vocabulary};

use super::load_config;
use crate::{train_log_path, vocab_path, CmdResult, Failure};

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Directory of corpus files; defaults to `paths.corpus` of the config.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Checkpoint to write; the vocabulary and log go next to it.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(a: PretrainArgs) -> CmdResult {
    let cfg = load_config(&a.config)?;
    let corpus = a
        .corpus
        .or_else(|| cfg.paths.corpus.clone())
        .ok_or_else(|| Failure::Usage("no corpus given (--corpus or paths.corpus)".into()))?;
    let raw = read_corpus_dir(&corpus)?;
    let vocab = Vocabulary::from_documents(&raw, cfg.model.vocab_size, cfg.model.k)?;
    let docs = encode_documents(&vocab, &raw);
    let hash = cfg.content_hash()?;
    log::info!(
        "pretraining on {} documents, vocabulary {} tokens, config {hash}",
        docs.len(),
        vocab.len()
    );

    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let log_path = train_log_path(&a.out);
    let mut log = BufWriter::new(File::create(&log_path)?);
    writeln!(log, "# config_sha256 {hash}")?;
    let (params, state, _) = pretrain(&docs, &cfg.model, &cfg.pretrain, cfg.seeds.pretrain, Some(&mut log))?;
    log.flush()?;

    let mut ckpt = Checkpoint::new(cfg.model.clone(), params);
    ckpt.meta.insert("config_sha256".into(), hash);
    ckpt.meta.insert("stage".into(), "pretrain".into());
    ckpt.meta.insert("steps".into(), state.step.to_string());
    write_atomic(&vocab_path(&a.out), vocab.to_tsv().as_bytes())?;
    ckpt.save(&a.out)?;
    println!("wrote {} after {} steps", a.out.display(), state.step);
    Ok(())
}
