pub mod analyze;
pub mod finetune;
pub mod pretrain;
pub mod synth;

use std::path::Path;

use mcls_core::config::RunConfig;
use mcls_core::textpipe::Vocabulary;
use mcls_core::Error;

use crate::{vocab_path, CmdResult, Failure};

pub(crate) fn load_config(path: &Path) -> CmdResult<RunConfig> {
    Ok(RunConfig::load(path)?)
}

pub(crate) fn load_vocab(ckpt: &Path, k: usize) -> CmdResult<Vocabulary> {
    let p = vocab_path(ckpt);
    let text = std::fs::read_to_string(&p)
        .map_err(|e| Failure::Core(Error::Input(format!("cannot read vocabulary {}: {e}", p.display()))))?;
    Ok(Vocabulary::from_tsv(&text, k)?)
}
