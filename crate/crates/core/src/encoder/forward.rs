use super::config::ModelConfig;
use super::params::BoundParams;
use crate::error::{shape_err, Error, Result};
use crate::numkernel::{Graph, Tensor, Var};
use crate::rng::Rng;
use crate::textpipe::{CLS0, PAD};

const LN_EPS: f64 = 1e-5;
const MASKED_SCORE: f64 = -1e9;

/// Graph handles for everything the heads and losses consume.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    /// Final hidden states at `[C1]..[CK]`, `[B, K, D]`.
    pub cls_hidden: Var,
    /// `W_{O,k} · cls_hidden[k]`, `[B, K, D]`.
    pub cls_embeddings: Var,
    /// Final hidden states of every position, `[B, L, D]`.
    pub token_hidden: Var,
    /// Sentence-order projection of the concatenated CLS states, `[B, D]`.
    pub so_embedding: Var,
}

/// Forward pass with the inserted per-CLS layers.
///
/// `dropout` enables training-mode dropout drawn from the given stream.
pub fn forward(
    g: &mut Graph,
    p: &BoundParams,
    cfg: &ModelConfig,
    rows: &[Vec<u32>],
    dropout: Option<&mut Rng>,
) -> Result<EncoderOutput> {
    run(g, p, cfg, rows, dropout, true)
}

/// Forward pass with every inserted layer skipped; the output heads still apply.
pub fn forward_no_insert(
    g: &mut Graph,
    p: &BoundParams,
    cfg: &ModelConfig,
    rows: &[Vec<u32>],
    dropout: Option<&mut Rng>,
) -> Result<EncoderOutput> {
    run(g, p, cfg, rows, dropout, false)
}

/// Forward pass honouring `cfg.use_inserted_layers`.
pub fn encode(
    g: &mut Graph,
    p: &BoundParams,
    cfg: &ModelConfig,
    rows: &[Vec<u32>],
    dropout: Option<&mut Rng>,
) -> Result<EncoderOutput> {
    run(g, p, cfg, rows, dropout, cfg.use_inserted_layers)
}

fn check_rows(cfg: &ModelConfig, rows: &[Vec<u32>]) -> Result<usize> {
    let len = rows.first().map(Vec::len).unwrap_or(0);
    if rows.is_empty() || len < cfg.k + 1 {
        return shape_err("encoder input", &[rows.len(), len], &[cfg.max_len]);
    }
    if len > cfg.max_len {
        return shape_err("encoder input (position overflow)", &[rows.len(), len], &[cfg.max_len]);
    }
    for (r, row) in rows.iter().enumerate() {
        if row.len() != len {
            return shape_err("encoder input (ragged rows)", &[r, row.len()], &[len]);
        }
        for k in 0..=cfg.k {
            if row[k] != CLS0 + k as u32 {
                return Err(Error::Input(format!(
                    "row {r} position {k} holds id {} instead of a CLS token",
                    row[k]
                )));
            }
        }
        if let Some(&t) = row.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(Error::Index {
                op: "encoder input",
                index: t as usize,
                extent: cfg.vocab_size,
            });
        }
    }
    Ok(len)
}

fn maybe_dropout(g: &mut Graph, x: Var, p: f64, rng: &mut Option<&mut Rng>) -> Result<Var> {
    match rng {
        Some(r) if p > 0.0 => g.dropout(x, p, r),
        _ => Ok(x),
    }
}

fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add_trailing(y, b)
}

/// Apply slice `k` of the `[K, out, in]` stack `w` to `h[:, k, :]` for every
/// `k`, adding `bias[k]` when given. `h` is `[B, K, D]`.
pub fn per_cls_linear(g: &mut Graph, h: Var, w: Var, bias: Option<Var>) -> Result<Var> {
    let hk = g.permute(h, &[1, 0, 2])?; // [K, B, in]
    let wt = g.permute(w, &[0, 2, 1])?; // [K, in, out]
    let y = g.bmm(hk, wt)?; // [K, B, out]
    let y = g.permute(y, &[1, 0, 2])?;
    match bias {
        Some(b) => g.add_trailing(y, b),
        None => Ok(y),
    }
}

fn attention(
    g: &mut Graph,
    p: &BoundParams,
    pre: &str,
    h: Var,
    mask: Var,
    dims: (usize, usize, usize, usize),
) -> Result<Var> {
    let (b, l, heads, dh) = dims;
    let d = heads * dh;
    let split = |g: &mut Graph, w: &str, bias: &str| -> Result<Var> {
        let y = linear(g, h, p.var(&format!("{pre}.attn.{w}"))?, p.var(&format!("{pre}.attn.{bias}"))?)?;
        let y = g.reshape(y, &[b, l, heads, dh])?;
        let y = g.permute(y, &[0, 2, 1, 3])?;
        g.reshape(y, &[b * heads, l, dh])
    };
    let q = split(g, "wq", "bq")?;
    let k = split(g, "wk", "bk")?;
    let v = split(g, "wv", "bv")?;
    let kt = g.permute(k, &[0, 2, 1])?;
    let scores = g.bmm(q, kt)?;
    let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
    let scores = g.add(scores, mask)?;
    let probs = g.softmax(scores);
    let ctx = g.bmm(probs, v)?;
    let ctx = g.reshape(ctx, &[b, heads, l, dh])?;
    let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = g.reshape(ctx, &[b * l, d])?;
    linear(g, ctx, p.var(&format!("{pre}.attn.wo"))?, p.var(&format!("{pre}.attn.bo"))?)
}

fn key_padding_mask(rows: &[Vec<u32>], heads: usize) -> Tensor {
    let l = rows[0].len();
    let mut data = Vec::with_capacity(rows.len() * heads * l * l);
    for row in rows {
        let key: Vec<f64> = row
            .iter()
            .map(|&t| if t == PAD { MASKED_SCORE } else { 0.0 })
            .collect();
        for _ in 0..heads * l {
            data.extend_from_slice(&key);
        }
    }
    Tensor::new(vec![rows.len() * heads, l, l], data).expect("mask shape")
}

fn run(
    g: &mut Graph,
    p: &BoundParams,
    cfg: &ModelConfig,
    rows: &[Vec<u32>],
    mut dropout: Option<&mut Rng>,
    insert: bool,
) -> Result<EncoderOutput> {
    let l = check_rows(cfg, rows)?;
    let (b, d, k, heads) = (rows.len(), cfg.d_model, cfg.k, cfg.n_heads);

    let ids: Vec<usize> = rows.iter().flatten().map(|&t| t as usize).collect();
    let positions: Vec<usize> = (0..b).flat_map(|_| 0..l).collect();
    let tok = g.embedding(p.var("tok_emb")?, &ids)?;
    let pos = g.embedding(p.var("pos_emb")?, &positions)?;
    let mut x = g.add(tok, pos)?; // [B*L, D]
    x = maybe_dropout(g, x, cfg.dropout_p, &mut dropout)?;
    let mask = g.constant(key_padding_mask(rows, heads));

    for layer in 1..=cfg.n_layers {
        let pre = format!("layer{layer}");
        let h = g.layer_norm(x, p.var(&format!("{pre}.ln1.gain"))?, p.var(&format!("{pre}.ln1.bias"))?, LN_EPS)?;
        let a = attention(g, p, &pre, h, mask, (b, l, heads, cfg.head_dim()))?;
        let a = maybe_dropout(g, a, cfg.dropout_p, &mut dropout)?;
        x = g.add(x, a)?;

        let h = g.layer_norm(x, p.var(&format!("{pre}.ln2.gain"))?, p.var(&format!("{pre}.ln2.bias"))?, LN_EPS)?;
        let f = linear(g, h, p.var(&format!("{pre}.ffn.w1"))?, p.var(&format!("{pre}.ffn.b1"))?)?;
        let f = g.gelu(f);
        let f = linear(g, f, p.var(&format!("{pre}.ffn.w2"))?, p.var(&format!("{pre}.ffn.b2"))?)?;
        let f = maybe_dropout(g, f, cfg.dropout_p, &mut dropout)?;
        x = g.add(x, f)?;

        if insert && cfg.insert_layers.contains(&layer) {
            x = replace_cls_states(g, p, x, layer, (b, l, d, k))?;
        }
    }

    let x = g.layer_norm(x, p.var("final_ln.gain")?, p.var("final_ln.bias")?, LN_EPS)?;
    let token_hidden = g.reshape(x, &[b, l, d])?;
    let cls_hidden = g.slice(token_hidden, 1, 1, k)?;
    let cls_embeddings = per_cls_linear(g, cls_hidden, p.var("head_mc.weight")?, None)?;
    let flat = g.reshape(cls_hidden, &[b, k * d])?;
    let so_embedding = linear(g, flat, p.var("so_proj.weight")?, p.var("so_proj.bias")?)?;
    Ok(EncoderOutput {
        cls_hidden,
        cls_embeddings,
        token_hidden,
        so_embedding,
    })
}

/// `h[Ck] ← L_{l,k}(h[Ck])`; `[CLS0]` and text positions pass through.
fn replace_cls_states(
    g: &mut Graph,
    p: &BoundParams,
    x: Var,
    layer: usize,
    dims: (usize, usize, usize, usize),
) -> Result<Var> {
    let (b, l, d, k) = dims;
    let x3 = g.reshape(x, &[b, l, d])?;
    let head = g.slice(x3, 1, 0, 1)?;
    let cls = g.slice(x3, 1, 1, k)?;
    let cls = per_cls_linear(
        g,
        cls,
        p.var(&format!("insert{layer}.weight"))?,
        Some(p.var(&format!("insert{layer}.bias"))?),
    )?;
    let mut parts = vec![head, cls];
    if l > k + 1 {
        parts.push(g.slice(x3, 1, k + 1, l - k - 1)?);
    }
    let y = g.concat(&parts, 1)?;
    g.reshape(y, &[b * l, d])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::init_encoder_params;
    use crate::rng::seeded;
    use crate::textpipe::SEP;

    fn cfg() -> ModelConfig {
        ModelConfig {
            k: 2,
            d_model: 8,
            n_layers: 3,
            n_heads: 2,
            d_ff: 16,
            insert_layers: vec![1, 2],
            vocab_size: 30,
            max_len: 10,
            dropout_p: 0.0,
            ..Default::default()
        }
    }

    fn rows() -> Vec<Vec<u32>> {
        vec![
            vec![3, 4, 5, 10, 11, SEP, 12, 0, 0, 0],
            vec![3, 4, 5, 13, SEP, 14, 15, 16, 0, 0],
            vec![3, 4, 5, 20, 21, 22, SEP, 23, 24, 25],
        ]
    }

    #[test]
    fn output_shapes() {
        let c = cfg();
        let params = init_encoder_params(&c, &mut seeded(1)).unwrap();
        let mut g = Graph::new();
        let p = params.bind(&mut g);
        let out = forward(&mut g, &p, &c, &rows(), None).unwrap();
        assert_eq!(g.shape(out.cls_hidden), &[3, 2, 8]);
        assert_eq!(g.shape(out.cls_embeddings), &[3, 2, 8]);
        assert_eq!(g.shape(out.token_hidden), &[3, 10, 8]);
        assert_eq!(g.shape(out.so_embedding), &[3, 8]);
    }

    #[test]
    fn identity_heads_pass_hidden_through() {
        let c = cfg();
        let mut params = init_encoder_params(&c, &mut seeded(1)).unwrap();
        let mut eye = Tensor::zeros(&[2, 8, 8]);
        for k in 0..2 {
            for i in 0..8 {
                eye.data_mut()[k * 64 + i * 8 + i] = 1.0;
            }
        }
        *params.get_mut("head_mc.weight").unwrap() = eye;
        let mut g = Graph::new();
        let p = params.bind(&mut g);
        let out = forward(&mut g, &p, &c, &rows(), None).unwrap();
        assert_eq!(g.value(out.cls_embeddings).data(), g.value(out.cls_hidden).data());
    }

    #[test]
    fn identity_inserts_match_no_insert() {
        let c = ModelConfig { k: 1, ..cfg() };
        let mut params = init_encoder_params(&c, &mut seeded(2)).unwrap();
        let rows: Vec<Vec<u32>> = vec![vec![3, 4, 10, 11, SEP, 12, 0, 0, 0, 0]];
        let (with, without) = {
            let mut g = Graph::new();
            let p = params.bind(&mut g);
            let a = forward(&mut g, &p, &c, &rows, None).unwrap();
            let b = forward_no_insert(&mut g, &p, &c, &rows, None).unwrap();
            (g.value(a.cls_embeddings).clone(), g.value(b.cls_embeddings).clone())
        };
        assert_ne!(with, without);
        for l in [1, 2] {
            let w = params.get_mut(&format!("insert{l}.weight")).unwrap();
            *w = Tensor::eye(8).reshaped(&[1, 8, 8]).unwrap();
            let bias = params.get_mut(&format!("insert{l}.bias")).unwrap();
            bias.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new();
        let p = params.bind(&mut g);
        let a = forward(&mut g, &p, &c, &rows, None).unwrap();
        let b = forward_no_insert(&mut g, &p, &c, &rows, None).unwrap();
        assert_eq!(g.value(a.cls_embeddings), g.value(b.cls_embeddings));
    }

    #[test]
    fn rejects_bad_rows() {
        let c = cfg();
        let params = init_encoder_params(&c, &mut seeded(1)).unwrap();
        let mut g = Graph::new();
        let p = params.bind(&mut g);
        let long = vec![vec![3, 4, 5, 6, 6, 6, 6, 6, 6, 6, 6]];
        assert!(matches!(forward(&mut g, &p, &c, &long, None), Err(Error::Shape { .. })));
        let no_cls = vec![vec![3, 5, 4, 6]];
        assert!(matches!(forward(&mut g, &p, &c, &no_cls, None), Err(Error::Input(_))));
        let oov = vec![vec![3, 4, 5, 99]];
        assert!(matches!(forward(&mut g, &p, &c, &oov, None), Err(Error::Index { .. })));
    }

    #[test]
    fn padding_does_not_leak_into_real_positions() {
        let c = cfg();
        let params = init_encoder_params(&c, &mut seeded(3)).unwrap();
        let short = vec![vec![3, 4, 5, 10, SEP, 11, 0, 0, 0, 0]];
        let other_pad = [vec![3, 4, 5, 10, SEP, 11, 0, 0, 0, 0]];
        let mut g = Graph::new();
        let p = params.bind(&mut g);
        let a = forward(&mut g, &p, &c, &short, None).unwrap();
        // Same real tokens, truncated padding: CLS states agree up to pos-emb of pads (unused).
        let b = forward(&mut g, &p, &c, &[other_pad[0][..7].to_vec()], None).unwrap();
        let (va, vb) = (g.value(a.cls_hidden).data(), g.value(b.cls_hidden).data());
        for (x, y) in va.iter().zip(vb) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}
