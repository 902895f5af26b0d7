//! Pretraining objectives as graph builders.
//!
//! Contrastive scores are raw cosines with no temperature. The multi-CLS
//! logit mixes the best-matching facet pair with the cosine of the facet sums:
//!
//! `λ · max_{i,j} cos(a_i, b_j) + (1 − λ) · cos(Σ_i a_i, Σ_j b_j)`
//!
//! The max routes its gradient to a single pair; ties go to the lowest `(i, j)`.

use crate::error::{shape_err, Error, Result};
use crate::numkernel::{Graph, Tensor, Var};
use crate::textpipe::MlmTarget;

/// A loss that may be absent (e.g. MLM on a batch with nothing masked).
#[derive(Clone, Copy, Debug)]
pub struct Objective {
    pub loss: Var,
    /// False when the loss was replaced by a constant 0.
    pub active: bool,
}

fn cosine_matrix(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let an = g.l2_normalize(a)?;
    let bn = g.l2_normalize(b)?;
    let bt = g.transpose(bn)?;
    g.matmul(an, bt)
}

/// Cosine similarity of two `[D]` vectors, as a one-element tensor.
pub fn qt_logit(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let d = g.shape(a).to_vec();
    if d.len() != 1 || g.shape(b) != d.as_slice() {
        return shape_err("qt_logit", &d, g.shape(b));
    }
    let a2 = g.reshape(a, &[1, d[0]])?;
    let b2 = g.reshape(b, &[1, d[0]])?;
    let c = cosine_matrix(g, a2, b2)?;
    g.reshape(c, &[1])
}

/// Multi-CLS logits between every row of `a` `[Na, K, D]` and every row of
/// `b` `[Nb, K, D]`, shaped `[Na, Nb]`.
pub fn mc_logit_matrix(g: &mut Graph, a: Var, b: Var, lambda: f64) -> Result<Var> {
    let (sa, sb) = (g.shape(a).to_vec(), g.shape(b).to_vec());
    if sa.len() != 3 || sb.len() != 3 || sa[1..] != sb[1..] {
        return shape_err("mc_logit", &sa, &sb);
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda {lambda} not in [0,1]")));
    }
    let (k, d) = (sa[1], sa[2]);
    let af = g.reshape(a, &[sa[0] * k, d])?;
    let bf = g.reshape(b, &[sb[0] * k, d])?;
    let pair = cosine_matrix(g, af, bf)?;
    let best = g.block_max(pair, k, k)?;
    let suma = g.sum_axis(a, 1)?;
    let sumb = g.sum_axis(b, 1)?;
    let summed = cosine_matrix(g, suma, sumb)?;
    let best = g.scale(best, lambda);
    let summed = g.scale(summed, 1.0 - lambda);
    g.add(best, summed)
}

/// Multi-CLS logit between two `[K, D]` facet sets, as a one-element tensor.
pub fn mc_logit(g: &mut Graph, a: Var, b: Var, lambda: f64) -> Result<Var> {
    let s = g.shape(a).to_vec();
    if s.len() != 2 || g.shape(b) != s.as_slice() {
        return shape_err("mc_logit", &s, g.shape(b));
    }
    let a3 = g.reshape(a, &[1, s[0], s[1]])?;
    let b3 = g.reshape(b, &[1, s[0], s[1]])?;
    let m = mc_logit_matrix(g, a3, b3, lambda)?;
    g.reshape(m, &[1])
}

/// Quick-thoughts loss over `[n, D]` anchors and positives; row `i` of part
/// 2 is the positive of anchor `i`, the other rows of part 2 its negatives.
pub fn qt_loss(g: &mut Graph, part1: Var, part2: Var) -> Result<Var> {
    let (s1, s2) = (g.shape(part1).to_vec(), g.shape(part2).to_vec());
    if s1.len() != 2 || s1 != s2 {
        return shape_err("qt_loss", &s1, &s2);
    }
    if s1[0] == 0 {
        return Err(Error::Config("qt_loss needs at least one anchor".into()));
    }
    let logits = cosine_matrix(g, part1, part2)?;
    let targets: Vec<usize> = (0..s1[0]).collect();
    g.softmax_cross_entropy(logits, &targets)
}

/// Two-part contrastive loss with multi-CLS logits (no hard negatives).
/// With `K = 1` this is exactly [`qt_loss`] on the single embedding.
pub fn mc_qt_two_part_loss(g: &mut Graph, part1: Var, part2: Var, lambda: f64) -> Result<Var> {
    let (s1, s2) = (g.shape(part1).to_vec(), g.shape(part2).to_vec());
    if s1.len() != 3 || s1 != s2 {
        return shape_err("mc_qt_two_part_loss", &s1, &s2);
    }
    let logits = mc_logit_matrix(g, part1, part2, lambda)?;
    let targets: Vec<usize> = (0..s1[0]).collect();
    g.softmax_cross_entropy(logits, &targets)
}

/// Multi-CLS quick-thoughts loss with hard negatives.
///
/// Parts are `[n, K, D]`. Anchors in part 1 pick their positive (same row of
/// part 2) out of all `2n` rows of parts 2 ∪ 3, so the row of part 3 that
/// follows the positive is the hard negative. Symmetrically, rows of part 3
/// pick their positive out of parts 1 ∪ 2. The loss is the sum of both mean
/// cross-entropies.
pub fn mcqt_loss(g: &mut Graph, part1: Var, part2: Var, part3: Var, lambda: f64) -> Result<Var> {
    let s = g.shape(part1).to_vec();
    if s.len() != 3 || g.shape(part2) != s.as_slice() || g.shape(part3) != s.as_slice() {
        return shape_err("mcqt_loss", &s, g.shape(part3));
    }
    let n = s[0];
    let all = g.concat(&[part1, part2, part3], 0)?;
    let logits = mc_logit_matrix(g, all, all, lambda)?; // [3n, 3n]

    let fwd_rows = g.slice(logits, 0, 0, n)?;
    let fwd = g.slice(fwd_rows, 1, n, 2 * n)?;
    let fwd_targets: Vec<usize> = (0..n).collect();
    let fwd_loss = g.softmax_cross_entropy(fwd, &fwd_targets)?;

    let bwd_rows = g.slice(logits, 0, 2 * n, n)?;
    let bwd = g.slice(bwd_rows, 1, 0, 2 * n)?;
    let bwd_targets: Vec<usize> = (n..2 * n).collect();
    let bwd_loss = g.softmax_cross_entropy(bwd, &bwd_targets)?;
    g.add(fwd_loss, bwd_loss)
}

/// Masked-token cross-entropy with the output projection tied to `embedding`
/// `[V, D]`. Without targets the loss is a constant 0 and `active` is false.
pub fn mlm_loss(g: &mut Graph, token_hidden: Var, targets: &[MlmTarget], embedding: Var) -> Result<Objective> {
    if targets.is_empty() {
        let zero = g.constant(Tensor::scalar(0.0));
        return Ok(Objective { loss: zero, active: false });
    }
    let s = g.shape(token_hidden).to_vec();
    if s.len() != 3 {
        return shape_err("mlm_loss", &s, &[3]);
    }
    let (b, l, d) = (s[0], s[1], s[2]);
    for t in targets {
        if t.row >= b || t.pos >= l {
            return shape_err("mlm_loss", &s, &[t.row, t.pos]);
        }
    }
    let flat = g.reshape(token_hidden, &[b * l, d])?;
    let idx: Vec<usize> = targets.iter().map(|t| t.row * l + t.pos).collect();
    let picked = g.gather_rows(flat, &idx)?;
    let et = g.transpose(embedding)?;
    let logits = g.matmul(picked, et)?;
    let labels: Vec<usize> = targets.iter().map(|t| t.original as usize).collect();
    let loss = g.softmax_cross_entropy(logits, &labels)?;
    Ok(Objective { loss, active: true })
}

/// Sentence-order classification: a `D → 2` linear classifier on `[B, D]`.
pub fn so_loss(g: &mut Graph, so_embedding: Var, labels: &[usize], weight: Var, bias: Var) -> Result<Var> {
    let logits = g.matmul(so_embedding, weight)?;
    let logits = g.add_trailing(logits, bias)?;
    g.softmax_cross_entropy(logits, labels)
}

/// Mean squared error between `sigmoid(h · w + b)` and the importance targets.
///
/// `targets` holds `(row, pos, value)` for every non-special position.
pub fn tfidf_loss(
    g: &mut Graph,
    token_hidden: Var,
    targets: &[(usize, usize, f64)],
    weight: Var,
    bias: Var,
) -> Result<Objective> {
    if targets.is_empty() {
        let zero = g.constant(Tensor::scalar(0.0));
        return Ok(Objective { loss: zero, active: false });
    }
    let s = g.shape(token_hidden).to_vec();
    if s.len() != 3 {
        return shape_err("tfidf_loss", &s, &[3]);
    }
    let (b, l, d) = (s[0], s[1], s[2]);
    let flat = g.reshape(token_hidden, &[b * l, d])?;
    let mut idx = Vec::with_capacity(targets.len());
    for &(r, p, _) in targets {
        if r >= b || p >= l {
            return shape_err("tfidf_loss", &s, &[r, p]);
        }
        idx.push(r * l + p);
    }
    let picked = g.gather_rows(flat, &idx)?;
    let pred = g.matmul(picked, weight)?;
    let pred = g.add_trailing(pred, bias)?;
    let pred = g.sigmoid(pred);
    let want: Vec<f64> = targets.iter().map(|t| t.2).collect();
    let want = g.constant(Tensor::new(vec![targets.len(), 1], want)?);
    let diff = g.sub(pred, want)?;
    let sq = g.mul(diff, diff)?;
    let loss = g.mean_all(sq);
    Ok(Objective { loss, active: true })
}
