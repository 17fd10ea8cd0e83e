//! SGD training with freeze plans, weakly supervised patch pretraining and
//! feature extraction.

mod freeze;
mod sgd;
mod trainer;

pub use freeze::{apply_strategy, build_freeze_plan, FreezePlan, Strategy};
pub use sgd::Sgd;
pub use trainer::{
    evaluate, extract_features, fit, predict_all, pretrain_wsp, train, BatchSource, EpochRecord, Learner,
    TrainConfig, TrainLog,
};
