//! Seeded synthetic corpora and tasks for smoke runs and tests.
//!
//! Words are opaque strings such as `t3w17` (topic 3, word 17) and `f5`
//! (a filler word shared by all topics). Every document mixes two topics, so
//! consecutive sentences share vocabulary and a sequence has more than one
//! facet.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finetune::{Metric, TaskFile, TaskKind, TextExample};
use crate::rng::Rng;
use crate::textpipe::RawDocument;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthCorpusConfig {
    pub n_docs: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    pub n_topics: usize,
    pub words_per_topic: usize,
    pub n_fillers: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Chance that a word is a filler rather than a topic word.
    pub filler_prob: f64,
}

impl Default for SynthCorpusConfig {
    fn default() -> Self {
        Self {
            n_docs: 200,
            min_sentences: 8,
            max_sentences: 12,
            n_topics: 8,
            words_per_topic: 24,
            n_fillers: 16,
            min_words: 4,
            max_words: 9,
            filler_prob: 0.3,
        }
    }
}

fn check(cfg: &SynthCorpusConfig) -> Result<()> {
    let ok = cfg.n_docs > 0
        && cfg.min_sentences > 0
        && cfg.min_sentences <= cfg.max_sentences
        && cfg.n_topics >= 2
        && cfg.words_per_topic > 0
        && cfg.n_fillers > 0
        && cfg.min_words > 0
        && cfg.min_words <= cfg.max_words
        && (0.0..=1.0).contains(&cfg.filler_prob);
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("invalid synthetic corpus settings {cfg:?}")))
    }
}

fn topic_sentence(cfg: &SynthCorpusConfig, topic: usize, rng: &mut Rng) -> Vec<String> {
    let len = rng.random_range(cfg.min_words..=cfg.max_words);
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < cfg.filler_prob {
                format!("f{}", rng.random_range(0..cfg.n_fillers))
            } else {
                format!("t{topic}w{}", rng.random_range(0..cfg.words_per_topic))
            }
        })
        .collect()
}

/// Documents drawing each sentence from one of two document topics.
pub fn synthetic_corpus(cfg: &SynthCorpusConfig, rng: &mut Rng) -> Result<Vec<RawDocument>> {
    check(cfg)?;
    let mut docs = Vec::with_capacity(cfg.n_docs);
    for _ in 0..cfg.n_docs {
        let a = rng.random_range(0..cfg.n_topics);
        let b = (a + rng.random_range(1..cfg.n_topics)) % cfg.n_topics;
        let n = rng.random_range(cfg.min_sentences..=cfg.max_sentences);
        let sentences = (0..n)
            .map(|_| {
                let t = if rng.random::<bool>() { a } else { b };
                topic_sentence(cfg, t, rng)
            })
            .collect();
        docs.push(RawDocument { sentences });
    }
    Ok(docs)
}

/// One sentence per line, blank line between documents.
pub fn render_corpus(docs: &[RawDocument]) -> String {
    let mut out = String::new();
    for (i, d) in docs.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for s in &d.sentences {
            let _ = writeln!(out, "{}", s.join(" "));
        }
    }
    out
}

pub fn write_corpus(docs: &[RawDocument], path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, render_corpus(docs))?;
    Ok(())
}

/// Two-class task: class `c` sentences come from topic `c` of `corpus_cfg`.
/// The classes share only filler words, so they are linearly separable by
/// bag of words.
pub fn separable_task(
    corpus_cfg: &SynthCorpusConfig,
    n_train: usize,
    n_dev: usize,
    rng: &mut Rng,
) -> Result<(Vec<TextExample>, Vec<TextExample>)> {
    check(corpus_cfg)?;
    let make = |n: usize, first_id: u64, rng: &mut Rng| {
        (0..n)
            .map(|i| {
                let label = i % 2;
                TextExample {
                    id: first_id + i as u64,
                    text: vec![topic_sentence(corpus_cfg, label, rng).join(" ")],
                    label: label as f64,
                }
            })
            .collect::<Vec<_>>()
    };
    let train = make(n_train, 0, rng);
    let dev = make(n_dev, n_train as u64, rng);
    Ok((train, dev))
}

/// [`separable_task`] packaged as a task file scored by accuracy.
pub fn separable_task_file(corpus_cfg: &SynthCorpusConfig, n_train: usize, n_dev: usize, rng: &mut Rng) -> Result<TaskFile> {
    let (train, dev) = separable_task(corpus_cfg, n_train, n_dev, rng)?;
    Ok(TaskFile {
        kind: TaskKind::Classification { classes: 2 },
        metric: Metric::Accuracy,
        train,
        dev,
    })
}
