//! Finite-difference checks for every differentiable operation.

use mcls_core::encoder::per_cls_linear;
use mcls_core::finetune::reparam_aggregate;
use mcls_core::numkernel::{Graph, Tensor, Var};
use mcls_core::pretrain::{mc_logit, mcqt_loss, mlm_loss, qt_loss, so_loss, tfidf_loss};
use mcls_core::rng::{stream, Rng};
use mcls_core::textpipe::MlmTarget;
use mcls_core::Result;
use rand::Rng as _;

use super::{max_grad_error, weighted_sum};

pub struct CaseResult {
    pub name: &'static str,
    pub instances: usize,
    pub worst: f64,
}

fn randn(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

fn dim(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

/// A case draws inputs and the loss builder for one random instance.
type Case = (&'static str, fn(&mut Rng) -> (Vec<Tensor>, Build));

fn cases() -> Vec<Case> {
    vec![
        ("add", |r| {
            let s = [dim(r, 1, 3), dim(r, 1, 4)];
            (vec![randn(&s, r), randn(&s, r)], Box::new(|g, v| { let y = g.add(v[0], v[1])?; weighted_sum(g, y) }))
        }),
        ("sub", |r| {
            let s = [dim(r, 1, 3), dim(r, 1, 4)];
            (vec![randn(&s, r), randn(&s, r)], Box::new(|g, v| { let y = g.sub(v[0], v[1])?; weighted_sum(g, y) }))
        }),
        ("mul", |r| {
            let s = [dim(r, 1, 3), dim(r, 1, 4)];
            (vec![randn(&s, r), randn(&s, r)], Box::new(|g, v| { let y = g.mul(v[0], v[1])?; weighted_sum(g, y) }))
        }),
        ("scale", |r| {
            let s = [dim(r, 1, 4)];
            let c: f64 = r.random_range(-2.0..2.0);
            (vec![randn(&s, r)], Box::new(move |g, v| { let y = g.scale(v[0], c); weighted_sum(g, y) }))
        }),
        ("add_trailing", |r| {
            let (a, b) = (dim(r, 1, 3), dim(r, 1, 4));
            (vec![randn(&[2, a, b], r), randn(&[b], r)], Box::new(|g, v| { let y = g.add_trailing(v[0], v[1])?; weighted_sum(g, y) }))
        }),
        ("gelu", |r| {
            let s = [dim(r, 1, 3), dim(r, 1, 4)];
            (vec![randn(&s, r)], Box::new(|g, v| { let y = g.gelu(v[0]); weighted_sum(g, y) }))
        }),
        ("sigmoid", |r| {
            let s = [dim(r, 1, 5)];
            (vec![randn(&s, r)], Box::new(|g, v| { let y = g.sigmoid(v[0]); weighted_sum(g, y) }))
        }),
        ("dropout", |r| {
            let s = [dim(r, 2, 4), dim(r, 2, 4)];
            let seed: u64 = r.random();
            (vec![randn(&s, r)], Box::new(move |g, v| {
                let y = g.dropout(v[0], 0.3, &mut stream(seed, "dropout"))?;
                weighted_sum(g, y)
            }))
        }),
        ("matmul", |r| {
            let (m, k, n) = (dim(r, 1, 4), dim(r, 1, 4), dim(r, 1, 4));
            (vec![randn(&[m, k], r), randn(&[k, n], r)], Box::new(|g, v| { let y = g.matmul(v[0], v[1])?; weighted_sum(g, y) }))
        }),
        ("bmm", |r| {
            let (b, m, k, n) = (dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 3));
            (vec![randn(&[b, m, k], r), randn(&[b, k, n], r)], Box::new(|g, v| { let y = g.bmm(v[0], v[1])?; weighted_sum(g, y) }))
        }),
        ("transpose", |r| {
            let s = [dim(r, 1, 4), dim(r, 1, 4)];
            (vec![randn(&s, r)], Box::new(|g, v| { let y = g.transpose(v[0])?; weighted_sum(g, y) }))
        }),
        ("permute", |r| {
            let s = [dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 3)];
            (vec![randn(&s, r)], Box::new(|g, v| { let y = g.permute(v[0], &[2, 0, 1])?; weighted_sum(g, y) }))
        }),
        ("reshape", |r| {
            let (a, b) = (dim(r, 1, 3), dim(r, 1, 4));
            (vec![randn(&[a, b], r)], Box::new(move |g, v| { let y = g.reshape(v[0], &[b * a])?; weighted_sum(g, y) }))
        }),
        ("gather_rows", |r| {
            let (n, d) = (dim(r, 2, 5), dim(r, 1, 3));
            let idx: Vec<usize> = (0..dim(r, 1, 6)).map(|_| r.random_range(0..n)).collect();
            (vec![randn(&[n, d], r)], Box::new(move |g, v| { let y = g.gather_rows(v[0], &idx)?; weighted_sum(g, y) }))
        }),
        ("concat", |r| {
            let (a, b, c) = (dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 3));
            (vec![randn(&[a, c], r), randn(&[b, c], r)], Box::new(|g, v| { let y = g.concat(&[v[0], v[1]], 0)?; weighted_sum(g, y) }))
        }),
        ("slice", |r| {
            let (a, b) = (dim(r, 2, 4), dim(r, 2, 5));
            let start = r.random_range(0..b - 1);
            let len = r.random_range(1..=b - start);
            (vec![randn(&[a, b], r)], Box::new(move |g, v| { let y = g.slice(v[0], 1, start, len)?; weighted_sum(g, y) }))
        }),
        ("layer_norm", |r| {
            let (a, d) = (dim(r, 1, 3), dim(r, 2, 5));
            (vec![randn(&[a, d], r), randn(&[d], r), randn(&[d], r)], Box::new(|g, v| {
                let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
                weighted_sum(g, y)
            }))
        }),
        ("softmax", |r| {
            let s = [dim(r, 1, 3), dim(r, 2, 5)];
            (vec![randn(&s, r)], Box::new(|g, v| { let y = g.softmax(v[0]); weighted_sum(g, y) }))
        }),
        ("l2_normalize", |r| {
            let s = [dim(r, 1, 3), dim(r, 2, 5)];
            (vec![randn(&s, r)], Box::new(|g, v| { let y = g.l2_normalize(v[0])?; weighted_sum(g, y) }))
        }),
        ("sum_all", |r| {
            let s = [dim(r, 1, 3), dim(r, 1, 4)];
            (vec![randn(&s, r)], Box::new(|g, v| { let y = g.mul(v[0], v[0])?; Ok(g.sum_all(y)) }))
        }),
        ("mean_all", |r| {
            let s = [dim(r, 1, 3), dim(r, 1, 4)];
            (vec![randn(&s, r)], Box::new(|g, v| { let y = g.mul(v[0], v[0])?; Ok(g.mean_all(y)) }))
        }),
        ("sum_axis", |r| {
            let s = [dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 3)];
            let axis = r.random_range(0..3);
            (vec![randn(&s, r)], Box::new(move |g, v| { let y = g.sum_axis(v[0], axis)?; weighted_sum(g, y) }))
        }),
        ("mean_axis", |r| {
            let s = [dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 3)];
            let axis = r.random_range(0..3);
            (vec![randn(&s, r)], Box::new(move |g, v| { let y = g.mean_axis(v[0], axis)?; weighted_sum(g, y) }))
        }),
        ("var_axis", |r| {
            let s = [dim(r, 1, 3), dim(r, 2, 4)];
            let axis = r.random_range(0..2);
            (vec![randn(&s, r)], Box::new(move |g, v| { let y = g.var_axis(v[0], axis)?; weighted_sum(g, y) }))
        }),
        ("center_axis", |r| {
            let s = [dim(r, 2, 4), dim(r, 1, 3)];
            (vec![randn(&s, r)], Box::new(|g, v| { let y = g.center_axis(v[0], 0)?; weighted_sum(g, y) }))
        }),
        ("block_max", |r| {
            let (bh, bw) = (dim(r, 1, 3), dim(r, 1, 3));
            let s = [bh * dim(r, 1, 2), bw * dim(r, 1, 2)];
            (vec![randn(&s, r)], Box::new(move |g, v| { let y = g.block_max(v[0], bh, bw)?; weighted_sum(g, y) }))
        }),
        ("softmax_cross_entropy", |r| {
            let (n, c) = (dim(r, 1, 4), dim(r, 2, 5));
            let t: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
            (vec![randn(&[n, c], r)], Box::new(move |g, v| g.softmax_cross_entropy(v[0], &t)))
        }),
        ("per_cls_linear", |r| {
            let (b, k, d, o) = (dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 3));
            (vec![randn(&[b, k, d], r), randn(&[k, o, d], r), randn(&[k, o], r)], Box::new(|g, v| {
                let y = per_cls_linear(g, v[0], v[1], Some(v[2]))?;
                weighted_sum(g, y)
            }))
        }),
        ("qt_loss", |r| {
            let (n, d) = (dim(r, 1, 4), dim(r, 2, 5));
            (vec![randn(&[n, d], r), randn(&[n, d], r)], Box::new(|g, v| qt_loss(g, v[0], v[1])))
        }),
        ("mc_logit", |r| {
            let (k, d) = (dim(r, 1, 4), dim(r, 2, 5));
            let lambda: f64 = r.random();
            (vec![randn(&[k, d], r), randn(&[k, d], r)], Box::new(move |g, v| mc_logit(g, v[0], v[1], lambda)))
        }),
        ("mcqt_loss", |r| {
            let (n, k, d) = (dim(r, 1, 3), dim(r, 1, 3), dim(r, 2, 4));
            let lambda: f64 = r.random();
            let s = [n, k, d];
            (vec![randn(&s, r), randn(&s, r), randn(&s, r)], Box::new(move |g, v| mcqt_loss(g, v[0], v[1], v[2], lambda)))
        }),
        ("mlm_loss", |r| {
            let (b, l, d, vocab) = (dim(r, 1, 2), dim(r, 2, 4), dim(r, 2, 4), dim(r, 3, 7));
            let targets: Vec<MlmTarget> = (0..dim(r, 1, 3))
                .map(|_| MlmTarget {
                    row: r.random_range(0..b),
                    pos: r.random_range(0..l),
                    original: r.random_range(0..vocab as u32),
                })
                .collect();
            (vec![randn(&[b, l, d], r), randn(&[vocab, d], r)], Box::new(move |g, v| Ok(mlm_loss(g, v[0], &targets, v[1])?.loss)))
        }),
        ("so_loss", |r| {
            let (b, d) = (dim(r, 1, 4), dim(r, 2, 4));
            let labels: Vec<usize> = (0..b).map(|_| r.random_range(0..2)).collect();
            (vec![randn(&[b, d], r), randn(&[d, 2], r), randn(&[2], r)], Box::new(move |g, v| so_loss(g, v[0], &labels, v[1], v[2])))
        }),
        ("tfidf_loss", |r| {
            let (b, l, d) = (dim(r, 1, 2), dim(r, 2, 4), dim(r, 2, 4));
            let targets: Vec<(usize, usize, f64)> = (0..dim(r, 1, 4))
                .map(|_| (r.random_range(0..b), r.random_range(0..l), r.random()))
                .collect();
            (vec![randn(&[b, l, d], r), randn(&[d, 1], r), randn(&[1], r)], Box::new(move |g, v| {
                Ok(tfidf_loss(g, v[0], &targets, v[1], v[2])?.loss)
            }))
        }),
        ("reparam_aggregate", |r| {
            let (b, k, d) = (dim(r, 1, 2), dim(r, 2, 4), dim(r, 1, 4));
            (vec![randn(&[b, k, d], r), randn(&[k, d, d], r)], Box::new(|g, v| {
                let y = reparam_aggregate(g, v[0], v[1])?;
                weighted_sum(g, y)
            }))
        }),
    ]
}

/// Run `instances` random checks of every case; reports the worst error each.
pub fn run_gradient_suite(instances: usize, seed: u64) -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    for (name, make) in cases() {
        let mut rng = stream(seed, name);
        let mut worst = 0.0f64;
        for _ in 0..instances {
            let (inputs, build) = make(&mut rng);
            worst = worst.max(max_grad_error(&inputs, build)?);
        }
        out.push(CaseResult { name, instances, worst });
    }
    Ok(out)
}
