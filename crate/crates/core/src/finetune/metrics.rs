//! Dev-set metrics; all are "higher is better".

use super::task::Metric;

pub fn accuracy(pred: &[usize], gold: &[usize]) -> f64 {
    if gold.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    hits as f64 / gold.len() as f64
}

fn confusion(pred: &[usize], gold: &[usize]) -> (f64, f64, f64, f64) {
    let (mut tp, mut tn, mut fp, mut fneg) = (0.0, 0.0, 0.0, 0.0);
    for (&p, &g) in pred.iter().zip(gold) {
        match (p == 1, g == 1) {
            (true, true) => tp += 1.0,
            (false, false) => tn += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fneg += 1.0,
        }
    }
    (tp, tn, fp, fneg)
}

/// Matthews correlation for binary labels (class 1 positive); 0 when undefined.
pub fn mcc(pred: &[usize], gold: &[usize]) -> f64 {
    let (tp, tn, fp, fneg) = confusion(pred, gold);
    let den = ((tp + fp) * (tp + fneg) * (tn + fp) * (tn + fneg)).sqrt();
    if den == 0.0 {
        0.0
    } else {
        (tp * tn - fp * fneg) / den
    }
}

/// F1 of class 1; 0 when there are no positives at all.
pub fn f1(pred: &[usize], gold: &[usize]) -> f64 {
    let (tp, _, fp, fneg) = confusion(pred, gold);
    let den = 2.0 * tp + fp + fneg;
    if den == 0.0 {
        0.0
    } else {
        2.0 * tp / den
    }
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            ranks[t] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        None
    } else {
        Some(sab / (saa * sbb).sqrt())
    }
}

/// Spearman rank correlation; 0 when either side is constant.
pub fn spearman(pred: &[f64], gold: &[f64]) -> f64 {
    pearson(&average_ranks(pred), &average_ranks(gold)).unwrap_or(0.0)
}

/// Score classifier outputs: `outputs[i]` are class probabilities, or a
/// one-element prediction for regression.
pub fn score(metric: Metric, outputs: &[Vec<f64>], gold: &[f64]) -> f64 {
    match metric {
        Metric::Spearman => {
            let pred: Vec<f64> = outputs.iter().map(|o| o[0]).collect();
            spearman(&pred, gold)
        }
        _ => {
            let pred: Vec<usize> = outputs.iter().map(|o| argmax(o)).collect();
            let gold: Vec<usize> = gold.iter().map(|&g| g as usize).collect();
            match metric {
                Metric::Accuracy => accuracy(&pred, &gold),
                Metric::Mcc => mcc(&pred, &gold),
                Metric::F1 => f1(&pred, &gold),
                Metric::Spearman => unreachable!(),
            }
        }
    }
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}
