//! Pretraining objectives and the multi-task training loop.

mod losses;
mod optim;
mod trainer;

pub use losses::{
    mc_logit, mc_logit_matrix, mc_qt_two_part_loss, mcqt_loss, mlm_loss, qt_logit, qt_loss, so_loss, tfidf_loss,
    Objective,
};
pub use optim::{clip_grad_norm, global_norm, Adam, WarmupSchedule};
pub use trainer::{
    build_objectives, contrastive_loss, pretrain, pretrain_step, tfidf_positions, LossValues, ObjectiveVars,
    PretrainConfig, PretrainState, Pretrainer, StepReport, CLIP_NORM, LOG_HEADER,
};
