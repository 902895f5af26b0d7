//! Expected calibration error over equal-size confidence bins.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finetune::{argmax, PredictionRecord};

pub const N_BINS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub count: usize,
    /// Mean correctness of the members (0 for an empty bin).
    pub accuracy: f64,
    /// Mean top-class probability of the members (0 for an empty bin).
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBins {
    /// Ordered from least to most confident.
    pub bins: Vec<Bin>,
}

/// Bin sizes for `n` items: `n / 10` each, with the remainder going one apiece
/// to the least confident bins.
pub fn bin_sizes(n: usize) -> [usize; N_BINS] {
    let mut s = [n / N_BINS; N_BINS];
    for b in s.iter_mut().take(n % N_BINS) {
        *b += 1;
    }
    s
}

/// ECE and its bins.
///
/// Records are ranked by top-class probability and cut into [`N_BINS`]
/// equal-size bins. Records with exactly equal confidence are
/// interchangeable, so each contributes the mean correctness of its tie
/// group; a tie group straddling a bin boundary therefore adds the same
/// accuracy on both sides and the result does not depend on record order.
pub fn ece(records: &[PredictionRecord]) -> Result<(f64, ReliabilityBins)> {
    if records.is_empty() {
        return Err(Error::Input("ECE needs at least one record".into()));
    }
    let mut items: Vec<(f64, f64)> = Vec::with_capacity(records.len());
    for r in records {
        if r.probs.len() < 2 {
            return Err(Error::Input(format!("record {} is not a classification prediction", r.id)));
        }
        let top = argmax(&r.probs);
        let correct = if top as f64 == r.gold { 1.0 } else { 0.0 };
        items.push((r.probs[top], correct));
    }
    items.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut i = 0;
    while i < items.len() {
        let mut j = i;
        while j + 1 < items.len() && items[j + 1].0 == items[i].0 {
            j += 1;
        }
        let mean = items[i..=j].iter().map(|x| x.1).sum::<f64>() / (j - i + 1) as f64;
        items[i..=j].iter_mut().for_each(|x| x.1 = mean);
        i = j + 1;
    }

    let n = items.len() as f64;
    let mut bins = Vec::with_capacity(N_BINS);
    let mut value = 0.0;
    let mut start = 0;
    for size in bin_sizes(items.len()) {
        let members = &items[start..start + size];
        start += size;
        let bin = if size == 0 {
            Bin {
                count: 0,
                accuracy: 0.0,
                confidence: 0.0,
            }
        } else {
            Bin {
                count: size,
                accuracy: members.iter().map(|x| x.1).sum::<f64>() / size as f64,
                confidence: members.iter().map(|x| x.0).sum::<f64>() / size as f64,
            }
        };
        value += size as f64 / n * (bin.accuracy - bin.confidence).abs();
        bins.push(bin);
    }
    Ok((value, ReliabilityBins { bins }))
}
