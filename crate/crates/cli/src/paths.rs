//! Sidecar files written next to a checkpoint.

use std::path::{Path, PathBuf};

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Vocabulary table (`token<TAB>id`) used to encode text for a checkpoint.
pub fn vocab_path(ckpt: &Path) -> PathBuf {
    with_suffix(ckpt, ".vocab")
}

/// Per-step pretraining log.
pub fn train_log_path(ckpt: &Path) -> PathBuf {
    with_suffix(ckpt, ".log.tsv")
}

/// Dev-metric history of a fine-tuning run.
pub fn metrics_path(model: &Path) -> PathBuf {
    with_suffix(model, ".metrics.tsv")
}

/// Dev-set predictions of a fine-tuned model.
pub fn predictions_path(model: &Path) -> PathBuf {
    with_suffix(model, ".predictions.jsonl")
}
