use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-objective weights of the summed pretraining loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub mcqt: f64,
    pub mlm: f64,
    pub so: f64,
    pub tfidf: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mcqt: 1.0,
            mlm: 1.0,
            so: 1.0,
            tfidf: 1.0,
        }
    }
}

/// Architecture and loss hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of extra CLS tokens `[C1]..[CK]`.
    pub k: usize,
    /// Weight of the max-facet term in the multi-CLS logit.
    pub lambda: f64,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// 1-based layer indices after which the per-CLS layers are applied.
    pub insert_layers: Vec<usize>,
    /// Ablation switch; `false` skips every inserted layer.
    #[serde(default = "enabled")]
    pub use_inserted_layers: bool,
    pub vocab_size: usize,
    pub max_len: usize,
    pub dropout_p: f64,
    #[serde(default)]
    pub loss_weights: LossWeights,
}

fn enabled() -> bool {
    true
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k: 5,
            lambda: 0.1,
            d_model: 64,
            n_layers: 4,
            n_heads: 4,
            d_ff: 256,
            insert_layers: vec![1, 3],
            use_inserted_layers: true,
            vocab_size: 2000,
            max_len: 64,
            dropout_p: 0.1,
            loss_weights: LossWeights::default(),
        }
    }
}

impl ModelConfig {
    /// Insert positions at roughly one and two thirds of the depth.
    pub fn default_insert_layers(n_layers: usize) -> Vec<usize> {
        let mut v: Vec<usize> = [n_layers / 3, 2 * n_layers / 3]
            .into_iter()
            .filter(|&l| l >= 1 && l < n_layers)
            .collect();
        v.dedup();
        v
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.k == 0 {
            return fail("k must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return fail(format!("lambda {} not in [0,1]", self.lambda));
        }
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.n_layers == 0 || self.d_ff == 0 {
            return fail("n_layers and d_ff must be positive".into());
        }
        if self.insert_layers.windows(2).any(|w| w[0] >= w[1]) {
            return fail(format!("insert_layers {:?} not strictly increasing", self.insert_layers));
        }
        if let Some(&l) = self
            .insert_layers
            .iter()
            .find(|&&l| l == 0 || l >= self.n_layers)
        {
            return fail(format!("insert layer {l} outside [1, {}]", self.n_layers - 1));
        }
        if self.vocab_size <= self.k + 5 {
            return fail(format!("vocab_size {} leaves no text tokens", self.vocab_size));
        }
        if self.max_len < self.k + 4 {
            return fail(format!("max_len {} too small for K={}", self.max_len, self.k));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return fail(format!("dropout_p {} not in [0,1)", self.dropout_p));
        }
        let w = self.loss_weights;
        if [w.mcqt, w.mlm, w.so, w.tfidf].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return fail(format!("loss weights must be finite and non-negative: {w:?}"));
        }
        Ok(())
    }
}
