//! Uncertainty rankings, top-20% overlap and its significance bound.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finetune::PredictionRecord;

/// Share of each ranking compared by [`top20_overlap`].
pub const TOP_FRACTION: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyMethod {
    /// Stored variance across CLS facets.
    MultiClsVar,
    /// Variance of class probabilities across prediction files.
    EnsembleVar,
    /// `1 − max probability`.
    LeastConfidence,
}

impl std::str::FromStr for UncertaintyMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multi_cls_var" => Ok(Self::MultiClsVar),
            "ensemble_var" => Ok(Self::EnsembleVar),
            "least_confidence" => Ok(Self::LeastConfidence),
            other => Err(Error::Input(format!("unknown uncertainty method {other}"))),
        }
    }
}

/// Check that every file lists the same ids in the same order.
pub fn check_aligned(files: &[Vec<PredictionRecord>]) -> Result<()> {
    let Some(first) = files.first() else {
        return Err(Error::Input("no prediction files".into()));
    };
    for (f, other) in files.iter().enumerate().skip(1) {
        if other.len() != first.len() {
            return Err(Error::Input(format!(
                "file {f} has {} records, expected {}",
                other.len(),
                first.len()
            )));
        }
        for (a, b) in first.iter().zip(other) {
            if a.id != b.id || a.probs.len() != b.probs.len() {
                return Err(Error::Input(format!("file {f}: record {} does not line up with id {}", b.id, a.id)));
            }
        }
    }
    Ok(())
}

/// Mean over classes of the population variance of each class probability
/// across `files`, per id.
pub fn ensemble_variance(files: &[Vec<PredictionRecord>]) -> Result<Vec<(u64, f64)>> {
    check_aligned(files)?;
    let m = files.len() as f64;
    Ok((0..files[0].len())
        .map(|i| {
            let c = files[0][i].probs.len();
            let mut total = 0.0;
            for l in 0..c {
                let mean = files.iter().map(|f| f[i].probs[l]).sum::<f64>() / m;
                total += files.iter().map(|f| (f[i].probs[l] - mean).powi(2)).sum::<f64>() / m;
            }
            (files[0][i].id, total / c as f64)
        })
        .collect())
}

/// Uncertainty per id. `ensemble_var` reads every file; the other methods
/// need exactly one.
pub fn uncertainty_scores(files: &[Vec<PredictionRecord>], method: UncertaintyMethod) -> Result<Vec<(u64, f64)>> {
    if method == UncertaintyMethod::EnsembleVar {
        return ensemble_variance(files);
    }
    let [records] = files else {
        return Err(Error::Input(format!("{method:?} ranks a single prediction file")));
    };
    records
        .iter()
        .map(|r| match method {
            UncertaintyMethod::MultiClsVar => {
                if r.cls_probs.is_empty() {
                    Err(Error::Input(format!("record {} has no per-CLS probabilities", r.id)))
                } else {
                    Ok((r.id, r.uncertainty))
                }
            }
            _ => {
                let top = r.probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                Ok((r.id, 1.0 - top))
            }
        })
        .collect()
}

/// Ids from most to least uncertain; equal scores by ascending id.
pub fn rank_by_uncertainty(scores: &[(u64, f64)]) -> Vec<u64> {
    let mut s = scores.to_vec();
    s.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    s.into_iter().map(|x| x.0).collect()
}

pub fn uncertainty_rank(files: &[Vec<PredictionRecord>], method: UncertaintyMethod) -> Result<Vec<u64>> {
    Ok(rank_by_uncertainty(&uncertainty_scores(files, method)?))
}

/// Shared members of the two top-20% sets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub count: usize,
    /// Size of each top set, `⌊0.2·N⌋`.
    pub m: usize,
    pub ratio: f64,
}

pub fn top20_overlap(a: &[u64], b: &[u64]) -> Result<Overlap> {
    if a.len() != b.len() {
        return Err(Error::Input(format!("rankings have {} and {} entries", a.len(), b.len())));
    }
    let m = (TOP_FRACTION * a.len() as f64).floor() as usize;
    if m == 0 {
        return Err(Error::Input(format!("{} examples leave an empty top-20% set", a.len())));
    }
    let top_a: HashMap<u64, ()> = a[..m].iter().map(|&id| (id, ())).collect();
    let count = b[..m].iter().filter(|id| top_a.contains_key(id)).count();
    Ok(Overlap {
        count,
        m,
        ratio: count as f64 / m as f64,
    })
}

/// Chernoff upper bound on the chance of seeing `Σ S_t` overlaps or more
/// when both rankings are random.
///
/// Under independence each trial overlaps `0.2² · N` examples on average, so
/// over `T` trials `μ = 0.04 · T · N`. With `δ = ΣS/μ − 1` the bound is
/// `(e^δ / (1+δ)^{1+δ})^μ`; it is vacuous (1) for `δ ≤ 0`.
pub fn chernoff_p(overlap_sums: &[usize], n: usize) -> Result<f64> {
    if overlap_sums.is_empty() || n == 0 {
        return Err(Error::Input("chernoff bound needs at least one trial and N > 0".into()));
    }
    let mu = TOP_FRACTION * TOP_FRACTION * overlap_sums.len() as f64 * n as f64;
    let total: usize = overlap_sums.iter().sum();
    let delta = total as f64 / mu - 1.0;
    if delta <= 0.0 {
        return Ok(1.0);
    }
    let log_bound = mu * (delta - (1.0 + delta) * delta.ln_1p());
    Ok(log_bound.exp().clamp(0.0, 1.0))
}

/// Agreement between two uncertainty methods over one or more trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub method_a: String,
    pub method_b: String,
    /// Overlap count per trial.
    pub overlaps: Vec<usize>,
    pub total_overlap: usize,
    pub ratio: f64,
    pub p_value: f64,
}

/// Compare rankings trial by trial; every trial must rank the same number of
/// examples.
pub fn overlap_report(method_a: &str, method_b: &str, trials: &[(Vec<u64>, Vec<u64>)]) -> Result<OverlapReport> {
    let Some((first, _)) = trials.first() else {
        return Err(Error::Input("no trials to compare".into()));
    };
    let n = first.len();
    let mut overlaps = Vec::with_capacity(trials.len());
    let mut slots = 0;
    for (a, b) in trials {
        if a.len() != n {
            return Err(Error::Input("trials rank different numbers of examples".into()));
        }
        let o = top20_overlap(a, b)?;
        overlaps.push(o.count);
        slots += o.m;
    }
    let total_overlap = overlaps.iter().sum();
    Ok(OverlapReport {
        method_a: method_a.into(),
        method_b: method_b.into(),
        p_value: chernoff_p(&overlaps, n)?,
        ratio: total_overlap as f64 / slots as f64,
        total_overlap,
        overlaps,
    })
}
