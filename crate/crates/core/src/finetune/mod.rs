//! Downstream fine-tuning on pooled CLS embeddings.

mod aggregate;
mod metrics;
mod model;
mod predict;
mod task;
mod trainer;

pub use aggregate::{aggregate, facet_outputs, plain_aggregate, reparam_aggregate, Aggregation};
pub use metrics::{accuracy, argmax, average_ranks, f1, mcc, pearson, score, spearman};
pub use model::{facet_spread, FinetunedModel, HeadOutput, AGG_WEIGHT, CLF_BIAS, CLF_WEIGHT};
pub use predict::{
    dropout_ensemble_predict, facet_uncertainty, per_cls_probabilities, predict, predict_with_uncertainty,
    swa_average, FacetProbs, PredictionRecord,
};
pub use task::{build_rows, Example, Metric, TaskFile, TaskKind, TaskSpec, TextExample};
pub use trainer::{evaluate, finetune, EvalPoint, FinetuneConfig, FinetuneOutcome};
