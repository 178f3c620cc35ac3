//! Two-stage supervised training and evaluation.

mod config;
mod eval;
mod log;
mod loops;

pub use config::TrainConfig;
pub use eval::{
    detection_loss, evaluate, gt_pose_loss, pose_smooth_l1, score_detections, EvalRecord,
    EvalReport, FeatureCache,
};
pub use log::{LogRow, TrainLog};
pub use loops::{
    cache_features, depth_input, location_target, pose_batch_step, pose_targets,
    supervised_pose_loss, train_locnet, train_posenet,
};
