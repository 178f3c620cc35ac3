use std::cmp::Ordering;

use super::config::ModelConfig;
use super::net::{encode, locnet_forward, posenet_forward, Pyramid};
use super::pose::{Detection, PoseOutput};
use crate::autodiff::{ParamStore, Tape, Tensor};
use crate::error::Result;
use crate::geometry::{nms_peaks, Heatmap};
use crate::scalar::Scalar;

/// Reads per-location [`PoseOutput`]s off evaluated pose matrices.
pub fn pose_outputs<T: Scalar>(
    tape: &Tape<T>,
    stages: &[crate::autodiff::Var; 4],
) -> Vec<PoseOutput<T>> {
    let vals = stages.map(|v| tape.value(v).data().to_vec());
    let n = vals[0].len() / 3;
    (0..n)
        .map(|i| {
            PoseOutput::from_stages([0, 1, 2, 3].map(|k| {
                let r = &vals[k][i * 3..i * 3 + 3];
                [r[0], r[1], r[2]]
            }))
        })
        .collect()
}

/// Pose outputs at given locations with no gradient tracking.
pub fn predict_poses<T: Scalar>(
    store: &ParamStore<T>,
    cfg: &ModelConfig,
    rgb: &Tensor<T>,
    depth: Option<&Tensor<T>>,
    locs: &[(T, T)],
) -> Result<Vec<PoseOutput<T>>> {
    if locs.is_empty() {
        return Ok(Vec::new());
    }
    let mut tape = Tape::inference();
    let feats = encode(&mut tape, store, cfg, rgb, depth)?;
    let pv = posenet_forward(&mut tape, store, cfg, &feats, locs)?;
    Ok(pose_outputs(&tape, &pv.stages))
}

/// Orders detections by uncertainty, then by location score (higher first).
pub fn rank_detections<T: Scalar>(dets: &mut [Detection<T>]) {
    dets.sort_by(|a, b| {
        a.m_uc.partial_cmp(&b.m_uc).unwrap_or(Ordering::Equal).then(
            b.location_score
                .partial_cmp(&a.location_score)
                .unwrap_or(Ordering::Equal),
        )
    });
}

/// Full pipeline on precomputed features: heatmap, peaks, poses, ranking.
pub fn detect_from_features<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    cfg: &ModelConfig,
    feats: &Pyramid,
    top_n: usize,
) -> Result<(Vec<Detection<T>>, Heatmap<T>)> {
    let hm = locnet_forward(tape, store, feats)?;
    let heatmap = Heatmap::new(tape.value(hm).clone(), cfg.heatmap_stride)?;
    let peaks = nms_peaks(
        &heatmap,
        T::lit(cfg.nms_threshold),
        cfg.nms_window,
        cfg.max_peaks,
    )?;
    if peaks.is_empty() {
        return Ok((Vec::new(), heatmap));
    }
    let locs: Vec<(T, T)> = peaks.iter().map(|p| (p.x, p.y)).collect();
    let pv = posenet_forward(tape, store, cfg, feats, &locs)?;
    let mut dets: Vec<Detection<T>> = pose_outputs(tape, &pv.stages)
        .into_iter()
        .zip(&peaks)
        .map(|(pose, p)| Detection {
            rect: pose.to_rect(p.x, p.y, cfg.input_size),
            location_score: p.score,
            m_uc: pose.m_uc,
            pose,
        })
        .collect();
    rank_detections(&mut dets);
    dets.truncate(top_n);
    Ok((dets, heatmap))
}

/// Grasp candidates for one observation, lowest uncertainty first, with the heatmap.
pub fn detect_with_heatmap<T: Scalar>(
    store: &ParamStore<T>,
    cfg: &ModelConfig,
    rgb: &Tensor<T>,
    depth: Option<&Tensor<T>>,
    top_n: usize,
) -> Result<(Vec<Detection<T>>, Heatmap<T>)> {
    let mut tape = Tape::inference();
    let feats = encode(&mut tape, store, cfg, rgb, depth)?;
    detect_from_features(&mut tape, store, cfg, &feats, top_n)
}

/// Grasp candidates for one observation, lowest uncertainty first.
pub fn detect<T: Scalar>(
    store: &ParamStore<T>,
    cfg: &ModelConfig,
    rgb: &Tensor<T>,
    depth: Option<&Tensor<T>>,
    top_n: usize,
) -> Result<Vec<Detection<T>>> {
    detect_with_heatmap(store, cfg, rgb, depth, top_n).map(|(d, _)| d)
}
