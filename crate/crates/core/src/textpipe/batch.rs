use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::corpus::Document;
use super::vocab::{CLS0, MASK, PAD, SEP};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// How many consecutive sequences each batch row group spans.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    /// Anchor and positive.
    TwoPart,
    /// Anchor, positive and hard negative.
    ThreePart,
}

impl BatchMode {
    pub fn parts(self) -> usize {
        match self {
            BatchMode::TwoPart => 2,
            BatchMode::ThreePart => 3,
        }
    }
}

/// Where a row came from: document index and index of its first sentence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RowSource {
    pub doc: usize,
    pub first_sentence: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MlmTarget {
    pub row: usize,
    pub pos: usize,
    pub original: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveBatch {
    pub mode: BatchMode,
    pub k: usize,
    pub max_len: usize,
    /// `B` rows of exactly `max_len` ids.
    pub token_ids: Vec<Vec<u32>>,
    /// Row contents before MLM corruption.
    pub clean_ids: Vec<Vec<u32>>,
    /// 1 for real tokens, 0 for padding.
    pub attention_mask: Vec<Vec<u8>>,
    /// The (possibly truncated) two sentences of each row, in rendered order.
    pub segments: Vec<(Vec<u32>, Vec<u32>)>,
    pub sources: Vec<RowSource>,
    pub so_labels: Vec<usize>,
    pub mlm_targets: Vec<MlmTarget>,
}

impl ContrastiveBatch {
    pub fn batch_size(&self) -> usize {
        self.token_ids.len()
    }

    /// Rows per part.
    pub fn part_size(&self) -> usize {
        self.batch_size() / self.mode.parts()
    }

    /// Row indices where parts 2 (and 3) begin.
    pub fn part_boundaries(&self) -> Vec<usize> {
        let n = self.part_size();
        (1..self.mode.parts()).map(|p| p * n).collect()
    }

    pub fn is_special(&self, id: u32) -> bool {
        id < 4 + self.k as u32
    }

    /// Rebuild `token_ids`, `clean_ids` and the mask from `segments`.
    fn render(&mut self) {
        let rows: Vec<Vec<u32>> = self
            .segments
            .iter()
            .map(|(a, b)| render_row(self.k, self.max_len, a, b))
            .collect();
        self.attention_mask = rows
            .iter()
            .map(|r| r.iter().map(|&t| u8::from(t != PAD)).collect())
            .collect();
        self.clean_ids = rows.clone();
        self.token_ids = rows;
    }
}

/// `[CLS0] [C1]..[CK] a [SEP] b [PAD]...`
fn render_row(k: usize, max_len: usize, a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut row = Vec::with_capacity(max_len);
    row.extend((0..=k as u32).map(|i| CLS0 + i));
    row.extend_from_slice(a);
    row.push(SEP);
    row.extend_from_slice(b);
    debug_assert!(row.len() <= max_len);
    row.resize(max_len, PAD);
    row
}

/// Trim the longer sentence (the second on ties) until both fit in `budget`.
fn truncate_pair(a: &mut Vec<u32>, b: &mut Vec<u32>, budget: usize) {
    while a.len() + b.len() > budget {
        if a.len() > b.len() {
            a.pop();
        } else {
            b.pop();
        }
    }
}

/// Knobs for a full batch: sampling, sentence-order swapping and masking.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchConfig {
    pub k: usize,
    pub batch_size: usize,
    pub max_len: usize,
    pub mode: BatchMode,
    pub swap_prob: f64,
    pub mask_prob: f64,
    pub vocab_size: usize,
}

/// Sample sequence groups without corrupting them.
///
/// Each row group takes `parts` consecutive two-sentence sequences from one
/// document: part 1 holds sentences `s, s+1`, part 2 `s+2, s+3` and part 3
/// `s+4, s+5`. Documents are drawn without replacement while enough eligible
/// ones remain, otherwise with replacement.
pub fn sample_contrastive_batch(
    docs: &[Document],
    k: usize,
    batch_size: usize,
    max_len: usize,
    mode: BatchMode,
    rng: &mut Rng,
) -> Result<ContrastiveBatch> {
    let parts = mode.parts();
    if batch_size == 0 || !batch_size.is_multiple_of(parts) {
        return Err(Error::Config(format!(
            "batch size {batch_size} is not a positive multiple of {parts}"
        )));
    }
    let budget = max_len
        .checked_sub(k + 2)
        .filter(|&b| b >= 2)
        .ok_or_else(|| Error::Config(format!("max_len {max_len} too small for K={k}")))?;
    let need = 2 * parts;
    let eligible: Vec<usize> = (0..docs.len()).filter(|&i| docs[i].len() >= need).collect();
    if eligible.is_empty() {
        return Err(Error::Sampling(format!("no document has at least {need} sentences")));
    }
    let n = batch_size / parts;
    let picks: Vec<usize> = if eligible.len() >= n {
        sample(rng, eligible.len(), n).into_iter().map(|i| eligible[i]).collect()
    } else {
        (0..n).map(|_| eligible[rng.random_range(0..eligible.len())]).collect()
    };

    let mut segments = vec![(Vec::new(), Vec::new()); batch_size];
    let mut sources = vec![RowSource { doc: 0, first_sentence: 0 }; batch_size];
    for (i, &d) in picks.iter().enumerate() {
        let doc = &docs[d];
        let start = rng.random_range(0..=doc.len() - need);
        for p in 0..parts {
            let s = start + 2 * p;
            let mut a = doc.sentences[s].clone();
            let mut b = doc.sentences[s + 1].clone();
            truncate_pair(&mut a, &mut b, budget);
            segments[p * n + i] = (a, b);
            sources[p * n + i] = RowSource { doc: d, first_sentence: s };
        }
    }
    let mut batch = ContrastiveBatch {
        mode,
        k,
        max_len,
        token_ids: Vec::new(),
        clean_ids: Vec::new(),
        attention_mask: Vec::new(),
        segments,
        sources,
        so_labels: vec![0; batch_size],
        mlm_targets: Vec::new(),
    };
    batch.render();
    Ok(batch)
}

/// Swap the two sentences of each row with probability `swap_prob`.
///
/// Rows are re-rendered, so this must run before [`apply_mlm_masking`].
pub fn apply_sentence_order_swap(batch: &mut ContrastiveBatch, swap_prob: f64, rng: &mut Rng) -> Result<()> {
    if !(0.0..=1.0).contains(&swap_prob) {
        return Err(Error::Config(format!("swap probability {swap_prob} not in [0,1]")));
    }
    for (seg, label) in batch.segments.iter_mut().zip(batch.so_labels.iter_mut()) {
        let swap = rng.random::<f64>() < swap_prob;
        if swap {
            std::mem::swap(&mut seg.0, &mut seg.1);
        }
        *label = usize::from(swap);
    }
    batch.mlm_targets.clear();
    batch.render();
    Ok(())
}

/// BERT-style corruption of non-special positions.
///
/// Each position is selected with probability `mask_prob`; a selected token
/// becomes `[MASK]` 80% of the time, a uniformly drawn text token 10% of the
/// time, and stays unchanged otherwise.
pub fn apply_mlm_masking(
    batch: &mut ContrastiveBatch,
    mask_prob: f64,
    vocab_size: usize,
    rng: &mut Rng,
) -> Result<()> {
    if !(mask_prob > 0.0 && mask_prob < 1.0) {
        return Err(Error::Config(format!("mask probability {mask_prob} not in (0,1)")));
    }
    let first_text = 4 + batch.k as u32;
    if vocab_size as u32 <= first_text {
        return Err(Error::Config(format!("vocabulary of {vocab_size} has no text tokens")));
    }
    batch.mlm_targets.clear();
    for row in 0..batch.batch_size() {
        for pos in 0..batch.max_len {
            let original = batch.clean_ids[row][pos];
            if batch.is_special(original) || rng.random::<f64>() >= mask_prob {
                continue;
            }
            let r: f64 = rng.random();
            batch.token_ids[row][pos] = if r < 0.8 {
                MASK
            } else if r < 0.9 {
                rng.random_range(first_text..vocab_size as u32)
            } else {
                original
            };
            batch.mlm_targets.push(MlmTarget { row, pos, original });
        }
    }
    Ok(())
}

/// Sample, swap and mask a batch; all randomness comes from `rng`.
pub fn build_contrastive_batch(docs: &[Document], cfg: &BatchConfig, rng: &mut Rng) -> Result<ContrastiveBatch> {
    let mut batch = sample_contrastive_batch(docs, cfg.k, cfg.batch_size, cfg.max_len, cfg.mode, rng)?;
    apply_sentence_order_swap(&mut batch, cfg.swap_prob, rng)?;
    apply_mlm_masking(&mut batch, cfg.mask_prob, cfg.vocab_size, rng)?;
    Ok(batch)
}
