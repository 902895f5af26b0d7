//! Shared helpers for integration and acceptance tests: a central-difference
//! gradient checker and from-scratch reference implementations.

#![allow(dead_code)]

use mcls_core::finetune::PredictionRecord;
use mcls_core::numkernel::{Graph, Tensor, Var};
use mcls_core::Result;

/// Denominator floor for relative errors of gradients near zero.
pub const REL_FLOOR: f64 = 1e-3;
pub const FD_STEP: f64 = 1e-6;

/// Largest relative error between backprop and central differences over
/// every input entry. `f` builds a scalar loss from leaves bound to `inputs`.
pub fn max_grad_error<F>(inputs: &[Tensor], f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; g.value(v).len()]))
        .collect();

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let l = f(&mut g, &vars)?;
        Ok(g.value(l).item())
    };
    let mut worst = 0.0f64;
    let mut xs = inputs.to_vec();
    for (i, grads) in analytic.iter().enumerate() {
        for j in 0..xs[i].len() {
            let orig = xs[i].data()[j];
            xs[i].data_mut()[j] = orig + FD_STEP;
            let up = eval(&xs)?;
            xs[i].data_mut()[j] = orig - FD_STEP;
            let down = eval(&xs)?;
            xs[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = grads[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Reduce any tensor to a scalar with fixed pseudo-random weights so every
/// output entry gets a distinct upstream gradient.
pub fn weighted_sum(g: &mut Graph, x: Var) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| ((i * 7919 % 113) as f64 / 113.0) - 0.37).collect();
    let w = g.constant(Tensor::new(shape, w)?);
    let p = g.mul(x, w)?;
    Ok(g.sum_all(p))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

/// Multi-CLS logit by enumerating every facet pair. `a`, `b` are `K` rows.
pub fn mc_logit_oracle(a: &[Vec<f64>], b: &[Vec<f64>], lambda: f64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for x in a {
        for y in b {
            best = best.max(cosine(x, y));
        }
    }
    let sum = |s: &[Vec<f64>]| {
        let mut acc = vec![0.0; s[0].len()];
        for r in s {
            for (t, v) in acc.iter_mut().zip(r) {
                *t += v;
            }
        }
        acc
    };
    lambda * best + (1.0 - lambda) * cosine(&sum(a), &sum(b))
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Hard-negative contrastive loss written out anchor by anchor.
/// `parts[p][i]` is the `K`-row facet set of row `i` in part `p`.
pub fn mcqt_oracle(parts: &[Vec<Vec<Vec<f64>>>; 3], lambda: f64) -> f64 {
    let n = parts[0].len();
    let term = |anchor: usize, cands: [usize; 2], pos_part: usize| {
        let mut total = 0.0;
        for i in 0..n {
            let mut logits = Vec::new();
            let mut positive = 0.0;
            for &p in &cands {
                for j in 0..n {
                    let l = mc_logit_oracle(&parts[anchor][i], &parts[p][j], lambda);
                    if p == pos_part && j == i {
                        positive = l;
                    }
                    logits.push(l);
                }
            }
            total += log_sum_exp(&logits) - positive;
        }
        total / n as f64
    };
    term(0, [1, 2], 1) + term(2, [0, 1], 1)
}

/// Rows of a `[n, K, D]` tensor as nested vectors.
pub fn nested3(t: &Tensor) -> Vec<Vec<Vec<f64>>> {
    let s = t.shape();
    (0..s[0])
        .map(|i| (0..s[1]).map(|k| t.data()[(i * s[1] + k) * s[2]..(i * s[1] + k + 1) * s[2]].to_vec()).collect())
        .collect()
}

/// ECE via explicit tie groups: every group of equal confidence spreads its
/// mean correctness over the rank positions it occupies.
pub fn ece_oracle(records: &[PredictionRecord]) -> f64 {
    let n = records.len();
    let mut conf_correct: Vec<(f64, f64)> = records
        .iter()
        .map(|r| {
            let mut top = 0;
            for (i, p) in r.probs.iter().enumerate() {
                if *p > r.probs[top] {
                    top = i;
                }
            }
            (r.probs[top], if top as f64 == r.gold { 1.0 } else { 0.0 })
        })
        .collect();
    conf_correct.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    // bin boundaries in rank space
    let mut bounds = vec![0];
    for j in 0..10 {
        let size = n / 10 + usize::from(j < n % 10);
        bounds.push(bounds[j] + size);
    }
    // tie groups as rank ranges
    let mut groups: Vec<(usize, usize, f64, f64)> = Vec::new();
    let mut start = 0;
    for i in 1..=n {
        if i == n || conf_correct[i].0 != conf_correct[start].0 {
            let acc = conf_correct[start..i].iter().map(|x| x.1).sum::<f64>() / (i - start) as f64;
            groups.push((start, i, conf_correct[start].0, acc));
            start = i;
        }
    }
    let mut ece = 0.0;
    for j in 0..10 {
        let (lo, hi) = (bounds[j], bounds[j + 1]);
        if lo == hi {
            continue;
        }
        let (mut acc, mut conf) = (0.0, 0.0);
        for &(s, e, c, a) in &groups {
            let overlap = e.min(hi).saturating_sub(s.max(lo)) as f64;
            acc += overlap * a;
            conf += overlap * c;
        }
        let m = (hi - lo) as f64;
        ece += m / n as f64 * (acc / m - conf / m).abs();
    }
    ece
}

/// `Σ_k (W_k − mean W) h_k` with each centered matrix materialized.
pub fn reparam_oracle(h: &[Vec<f64>], w: &[Vec<Vec<f64>>]) -> Vec<f64> {
    let k = w.len();
    let (rows, cols) = (w[0].len(), w[0][0].len());
    let mut mean = vec![vec![0.0; cols]; rows];
    for wk in w {
        for r in 0..rows {
            for c in 0..cols {
                mean[r][c] += wk[r][c] / k as f64;
            }
        }
    }
    let mut out = vec![0.0; rows];
    for (wk, hk) in w.iter().zip(h) {
        for r in 0..rows {
            for c in 0..cols {
                out[r] += (wk[r][c] - mean[r][c]) * hk[c];
            }
        }
    }
    out
}

/// `(e^δ / (1+δ)^{1+δ})^μ` evaluated directly.
pub fn chernoff_oracle(mu: f64, delta: f64) -> f64 {
    (delta.exp() / (1.0 + delta).powf(1.0 + delta)).powf(mu)
}
pub mod criteria;
pub mod grad_suite;
