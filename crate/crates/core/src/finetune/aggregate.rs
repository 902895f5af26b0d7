//! Pooling the `K` CLS states into one sentence embedding.

use serde::{Deserialize, Serialize};

use crate::encoder::per_cls_linear;
use crate::error::{shape_err, Error, Result};
use crate::numkernel::{Graph, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// `Σ_k (W_k − mean W) h_k`; needs `K ≥ 2`.
    Reparam,
    /// `Σ_k W_k h_k`.
    Sum,
    /// Single CLS: `W_1 h_1`; needs `K = 1`.
    K1,
}

impl Aggregation {
    pub fn name(self) -> &'static str {
        match self {
            Aggregation::Reparam => "reparam",
            Aggregation::Sum => "sum",
            Aggregation::K1 => "k1",
        }
    }

    pub fn check(self, k: usize) -> Result<()> {
        match self {
            Aggregation::Reparam if k < 2 => Err(Error::Config(format!(
                "reparam aggregation needs K ≥ 2 (model has K={k}); use sum or k1"
            ))),
            Aggregation::K1 if k != 1 => Err(Error::Config(format!("k1 aggregation needs K = 1 (model has K={k})"))),
            _ => Ok(()),
        }
    }
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reparam" => Ok(Aggregation::Reparam),
            "sum" => Ok(Aggregation::Sum),
            "k1" => Ok(Aggregation::K1),
            other => Err(Error::Config(format!("unknown aggregation {other}"))),
        }
    }
}

impl std::fmt::Display for Aggregation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn check_shapes(g: &Graph, h: Var, w: Var, op: &'static str) -> Result<()> {
    let (sh, sw) = (g.shape(h), g.shape(w));
    if sh.len() != 3 || sw.len() != 3 || sw[0] != sh[1] || sw[2] != sh[2] {
        return shape_err(op, sh, sw);
    }
    Ok(())
}

/// Per-facet outputs `[B, K, out]` of the transforms an aggregation sums.
pub fn facet_outputs(g: &mut Graph, cls_hidden: Var, w: Var, agg: Aggregation) -> Result<Var> {
    check_shapes(g, cls_hidden, w, "aggregate")?;
    agg.check(g.shape(w)[0])?;
    match agg {
        Aggregation::Reparam => {
            let centered = g.center_axis(w, 0)?;
            per_cls_linear(g, cls_hidden, centered, None)
        }
        Aggregation::Sum | Aggregation::K1 => per_cls_linear(g, cls_hidden, w, None),
    }
}

/// `Σ_k (W_k − mean_{k'} W_{k'}) h_k` for `cls_hidden` `[B, K, D]` and `w`
/// `[K, out, D]`; result `[B, out]`.
pub fn reparam_aggregate(g: &mut Graph, cls_hidden: Var, w: Var) -> Result<Var> {
    let f = facet_outputs(g, cls_hidden, w, Aggregation::Reparam)?;
    g.sum_axis(f, 1)
}

/// `Σ_k W_k h_k`; result `[B, out]`.
pub fn plain_aggregate(g: &mut Graph, cls_hidden: Var, w: Var) -> Result<Var> {
    let f = facet_outputs(g, cls_hidden, w, Aggregation::Sum)?;
    g.sum_axis(f, 1)
}

pub fn aggregate(g: &mut Graph, cls_hidden: Var, w: Var, agg: Aggregation) -> Result<Var> {
    let f = facet_outputs(g, cls_hidden, w, agg)?;
    g.sum_axis(f, 1)
}
