//! How differently the CLS facets arrange a batch.
//!
//! For facet `k`, take every dot product `⟨c1[i,k], c2[j,k]⟩` between rows of
//! two parts of a batch (`n²` numbers). Two facets that induce the same
//! similarity structure have highly correlated sequences; a correlation near
//! 1 for every pair signals that the facets have collapsed.

use crate::encoder::{encode, ModelConfig, ParamSet};
use crate::error::{shape_err, Error, Result};
use crate::finetune::pearson;
use crate::numkernel::{Graph, Tensor};
use crate::rng::Rng;
use crate::textpipe::{sample_contrastive_batch, BatchMode, Document};

fn pair_dots(c1: &Tensor, c2: &Tensor, k: usize) -> Vec<f64> {
    let (n, kk, d) = (c1.shape()[0], c1.shape()[1], c1.shape()[2]);
    fn at(t: &Tensor, i: usize, k: usize, kk: usize, d: usize) -> &[f64] {
        let off = (i * kk + k) * d;
        &t.data()[off..off + d]
    }
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        let a = at(c1, i, k, kk, d);
        for j in 0..n {
            out.push(a.iter().zip(at(c2, j, k, kk, d)).map(|(x, y)| x * y).sum());
        }
    }
    out
}

fn check(c1: &Tensor, c2: &Tensor) -> Result<()> {
    if c1.ndim() != 3 || c1.shape() != c2.shape() {
        return shape_err("diversity_corr", c1.shape(), c2.shape());
    }
    if c1.shape()[0] < 2 {
        return Err(Error::Input("diversity needs at least two rows per part".into()));
    }
    Ok(())
}

/// Pearson correlation between the pairwise-dot-product sequences of facets
/// `k1` and `k2` for parts `c1`, `c2` shaped `[n, K, D]`.
pub fn diversity_corr(c1: &Tensor, c2: &Tensor, k1: usize, k2: usize) -> Result<f64> {
    check(c1, c2)?;
    let k = c1.shape()[1];
    for kk in [k1, k2] {
        if kk >= k {
            return Err(Error::Index {
                op: "diversity_corr",
                index: kk,
                extent: k,
            });
        }
    }
    pearson(&pair_dots(c1, c2, k1), &pair_dots(c1, c2, k2))
        .ok_or_else(|| Error::Estimation(format!("facet {k1} or {k2} has constant pairwise dot products")))
}

/// Correlation for every facet pair `k1 < k2`, as `(k1, k2, corr)`.
pub fn diversity_matrix(c1: &Tensor, c2: &Tensor) -> Result<Vec<(usize, usize, f64)>> {
    check(c1, c2)?;
    let k = c1.shape()[1];
    let dots: Vec<Vec<f64>> = (0..k).map(|kk| pair_dots(c1, c2, kk)).collect();
    let mut out = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            let r = pearson(&dots[a], &dots[b])
                .ok_or_else(|| Error::Estimation(format!("facet {a} or {b} has constant pairwise dot products")))?;
            out.push((a, b, r));
        }
    }
    Ok(out)
}

/// Mean correlation over all facet pairs; needs `K ≥ 2`.
pub fn mean_offdiag_corr(c1: &Tensor, c2: &Tensor) -> Result<f64> {
    let m = diversity_matrix(c1, c2)?;
    if m.is_empty() {
        return Err(Error::Input("diversity needs at least two CLS facets".into()));
    }
    Ok(m.iter().map(|x| x.2).sum::<f64>() / m.len() as f64)
}

/// Facet correlations of an encoder on `rows` consecutive-sentence pairs
/// drawn from `docs`.
pub fn encoder_diversity(
    params: &ParamSet,
    cfg: &ModelConfig,
    docs: &[Document],
    rows: usize,
    rng: &mut Rng,
) -> Result<Vec<(usize, usize, f64)>> {
    if cfg.k < 2 {
        return Err(Error::Input("diversity needs at least two CLS facets".into()));
    }
    let batch = sample_contrastive_batch(docs, cfg.k, 2 * rows, cfg.max_len, BatchMode::TwoPart, rng)?;
    let mut g = Graph::new();
    let p = params.bind_frozen(&mut g);
    let out = encode(&mut g, &p, cfg, &batch.token_ids, None)?;
    let c = g.value(out.cls_embeddings);
    let half = c.len() / 2;
    let shape = vec![rows, cfg.k, cfg.d_model];
    let c1 = Tensor::new(shape.clone(), c.data()[..half].to_vec())?;
    let c2 = Tensor::new(shape, c.data()[half..].to_vec())?;
    diversity_matrix(&c1, &c2)
}
