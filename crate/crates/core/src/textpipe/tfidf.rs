use std::collections::HashMap;

use super::batch::ContrastiveBatch;
use super::corpus::Document;

/// Smoothed inverse document frequencies, indexed by token id.
#[derive(Clone, Debug, PartialEq)]
pub struct TfidfTable {
    idf: Vec<f64>,
    n_docs: usize,
}

impl TfidfTable {
    /// `idf(t) = ln((1 + N) / (1 + df(t))) + 1`.
    pub fn build(docs: &[Document], vocab_size: usize) -> Self {
        let mut df = vec![0usize; vocab_size];
        for doc in docs {
            let mut seen: Vec<u32> = doc.sentences.iter().flatten().copied().collect();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                if let Some(c) = df.get_mut(t as usize) {
                    *c += 1;
                }
            }
        }
        let n = docs.len() as f64;
        let idf = df.iter().map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0).collect();
        Self {
            idf,
            n_docs: docs.len(),
        }
    }

    pub fn idf(&self, id: u32) -> f64 {
        self.idf.get(id as usize).copied().unwrap_or(1.0)
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn vocab_size(&self) -> usize {
        self.idf.len()
    }
}

/// Per-position importance targets for the uncorrupted rows of `batch`.
///
/// `weight = count(token in row) × idf(token)`, min-max scaled to `[0, 1]`
/// within each row. Control tokens get 0, and a row whose weights are all
/// equal is all 0.
pub fn compute_tfidf_targets(batch: &ContrastiveBatch, table: &TfidfTable) -> Vec<Vec<f64>> {
    batch
        .clean_ids
        .iter()
        .map(|row| {
            let mut counts: HashMap<u32, usize> = HashMap::new();
            for &t in row.iter().filter(|&&t| !batch.is_special(t)) {
                *counts.entry(t).or_default() += 1;
            }
            let raw: Vec<Option<f64>> = row
                .iter()
                .map(|&t| (!batch.is_special(t)).then(|| counts[&t] as f64 * table.idf(t)))
                .collect();
            let (lo, hi) = raw
                .iter()
                .flatten()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &w| (lo.min(w), hi.max(w)));
            let span = hi - lo;
            raw.iter()
                .map(|w| match w {
                    Some(w) if span > 0.0 => (w - lo) / span,
                    _ => 0.0,
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::textpipe::{sample_contrastive_batch, BatchMode};

    fn docs() -> Vec<Document> {
        // K = 1, so text ids start at 5.
        vec![
            Document::new(vec![vec![5, 6], vec![5, 7], vec![5, 5], vec![8]]).unwrap(),
            Document::new(vec![vec![5, 9]]).unwrap(),
            Document::new(vec![vec![5, 6, 10]]).unwrap(),
        ]
    }

    #[test]
    fn idf_formula() {
        let t = TfidfTable::build(&docs(), 12);
        assert_eq!(t.n_docs(), 3);
        assert_eq!(t.idf(5), 1.0); // in every document
        assert!((t.idf(6) - ((4.0f64 / 3.0).ln() + 1.0)).abs() < 1e-15);
        assert!((t.idf(7) - (2.0f64.ln() + 1.0)).abs() < 1e-15);
        assert!((t.idf(11) - (4.0f64.ln() + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn fixture_weights() {
        let d = docs();
        let table = TfidfTable::build(&d, 12);
        let b = sample_contrastive_batch(&d[..1], 1, 2, 12, BatchMode::TwoPart, &mut seeded(0)).unwrap();
        let w = compute_tfidf_targets(&b, &table);
        // row 0 = [CLS0 C1 5 6 SEP 5 7 PAD...]: raw 5 → 2·1 = 2, 6 → ln(4/3)+1, 7 → ln 2 + 1
        let r6 = (4.0f64 / 3.0).ln() + 1.0;
        let r7 = 2.0f64.ln() + 1.0;
        let (lo, hi) = (r6, 2.0);
        let expect = [0.0, 0.0, 1.0, 0.0, 0.0, 1.0, (r7 - lo) / (hi - lo), 0.0, 0.0, 0.0, 0.0, 0.0];
        for (g, e) in w[0].iter().zip(expect) {
            assert!((g - e).abs() < 1e-12, "{:?}", w[0]);
        }
        // row 1 = [CLS0 C1 5 5 SEP 8 ...]: raw 5 → 2, 8 → ln 2 + 1 ≈ 1.69
        let expect1 = [0.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        for (g, e) in w[1].iter().zip(expect1) {
            assert!((g - e).abs() < 1e-12, "{:?}", w[1]);
        }
    }

    #[test]
    fn repeated_token_row_is_zero() {
        let d = vec![Document::new(vec![vec![5, 5], vec![5], vec![5], vec![5, 5, 5]]).unwrap()];
        let table = TfidfTable::build(&d, 8);
        let b = sample_contrastive_batch(&d, 1, 2, 10, BatchMode::TwoPart, &mut seeded(0)).unwrap();
        let w = compute_tfidf_targets(&b, &table);
        assert!(w.iter().flatten().all(|&v| v == 0.0));
    }
}
