//! Detection network: fused RGB-D pyramid encoder, heatmap head, pyramid pose heads.

mod config;
mod detect;
mod net;
mod pose;

pub use config::ModelConfig;
pub use detect::{
    detect, detect_from_features, detect_with_heatmap, pose_outputs, predict_poses, rank_detections,
};
pub use net::{
    crop_origin, encode, init_locnet, init_params, locnet_forward, posenet_forward, zero_depth,
    PoseVars, Pyramid, BACKBONE, DEPTH_BRANCH, LOCNET, POSENET,
};
pub use pose::{denormalize_pose, normalize_pose, Detection, PoseOutput};
