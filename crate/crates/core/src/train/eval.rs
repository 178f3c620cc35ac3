use std::path::Path;

use serde::{Deserialize, Serialize};

use super::loops::{cache_features, depth_input, pose_targets};
use crate::autodiff::{ParamStore, Tape, Tensor};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::geometry::{is_success, GraspRect};
use crate::model::{
    detect, normalize_pose, pose_outputs, posenet_forward, zero_depth, Detection, ModelConfig,
    Pyramid,
};
use crate::scalar::Scalar;

/// Outcome for one evaluation sample. Detection fields are empty when nothing was found.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub n_detections: usize,
    pub success: bool,
    pub x: Option<f64>,
    pub y: Option<f64>,
    pub theta: Option<f64>,
    pub w: Option<f64>,
    pub h: Option<f64>,
    pub m_uc: Option<f64>,
    pub loss_most_certain: Option<f64>,
    pub loss_all: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub success_rate: f64,
    /// Mean over samples of the average pose loss of all detections.
    pub pose_loss_all: f64,
    /// Mean over samples of the pose loss of the lowest-uncertainty detection.
    pub pose_loss_most_certain: f64,
    pub n_samples: usize,
    pub records: Vec<EvalRecord>,
}

/// Mean smooth-L1 between two normalised poses.
pub fn pose_smooth_l1(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter()
        .zip(&b)
        .map(|(p, t)| {
            let d = (p - t).abs();
            if d < 1.0 {
                0.5 * d * d
            } else {
                d - 0.5
            }
        })
        .sum::<f64>()
        / 3.0
}

fn nearest<T: Scalar>(anns: &[GraspRect<T>], x: T, y: T) -> &GraspRect<T> {
    anns.iter()
        .min_by(|a, b| {
            let da = (a.x - x).powi(2) + (a.y - y).powi(2);
            let db = (b.x - x).powi(2) + (b.y - y).powi(2);
            da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal)
        })
        .expect("labelled sample")
}

/// Pose loss of one detection's mean pose against the annotation nearest to it.
pub fn detection_loss<T: Scalar>(
    d: &Detection<T>,
    anns: &[GraspRect<T>],
    input_size: usize,
) -> f64 {
    let gt = nearest(anns, d.rect.x, d.rect.y);
    let target = normalize_pose(gt, input_size).map(|v| v.as_f64());
    pose_smooth_l1(d.pose.mean_pose.map(|v| v.as_f64()), target)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Scores ranked detections (lowest uncertainty first) against the annotations.
/// Success is judged on the first detection only; a sample without detections fails
/// and is left out of the pose-loss means.
pub fn score_detections<T: Scalar>(
    samples: &[Sample<T>],
    detections: &[Vec<Detection<T>>],
    input_size: usize,
) -> Result<EvalReport> {
    if samples.len() != detections.len() {
        return Err(Error::Argument(format!(
            "{} samples but {} detection lists",
            samples.len(),
            detections.len()
        )));
    }
    let mut records = Vec::with_capacity(samples.len());
    for (s, dets) in samples.iter().zip(detections) {
        if !s.labelled {
            return Err(Error::Argument(format!(
                "eval sample {} is unlabelled",
                s.id
            )));
        }
        let rec = match dets.first() {
            None => EvalRecord {
                id: s.id.clone(),
                n_detections: 0,
                success: false,
                x: None,
                y: None,
                theta: None,
                w: None,
                h: None,
                m_uc: None,
                loss_most_certain: None,
                loss_all: None,
            },
            Some(best) => {
                let r = best.rect;
                EvalRecord {
                    id: s.id.clone(),
                    n_detections: dets.len(),
                    success: is_success(&r, &s.annotations)?,
                    x: Some(r.x.as_f64()),
                    y: Some(r.y.as_f64()),
                    theta: Some(r.theta.as_f64()),
                    w: Some(r.w.as_f64()),
                    h: Some(r.h.as_f64()),
                    m_uc: Some(best.m_uc.as_f64()),
                    loss_most_certain: Some(detection_loss(best, &s.annotations, input_size)),
                    loss_all: Some(mean(
                        dets.iter()
                            .map(|d| detection_loss(d, &s.annotations, input_size)),
                    )),
                }
            }
        };
        records.push(rec);
    }
    let n = records.len();
    Ok(EvalReport {
        success_rate: if n == 0 {
            0.0
        } else {
            records.iter().filter(|r| r.success).count() as f64 / n as f64
        },
        pose_loss_all: mean(records.iter().filter_map(|r| r.loss_all)),
        pose_loss_most_certain: mean(records.iter().filter_map(|r| r.loss_most_certain)),
        n_samples: n,
        records,
    })
}

/// Runs detection on every sample and scores the `top_n` best-ranked candidates.
pub fn evaluate<T: Scalar>(
    store: &ParamStore<T>,
    cfg: &ModelConfig,
    samples: &[Sample<T>],
    top_n: usize,
) -> Result<EvalReport> {
    let zeros = zero_depth(cfg);
    let dets = samples
        .iter()
        .map(|s| {
            detect(
                store,
                cfg,
                &s.rgb,
                depth_input(cfg, s, &zeros),
                top_n.max(1),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    score_detections(samples, &dets, cfg.input_size)
}

/// Labelled samples with precomputed backbone features, for repeated pose-head
/// evaluation while the backbone stays fixed.
#[derive(Clone, Debug)]
pub struct FeatureCache<T> {
    pub feats: Vec<[Tensor<T>; 4]>,
    pub locs: Vec<Vec<(T, T)>>,
    pub targets: Vec<Tensor<T>>,
}

impl<T: Scalar> FeatureCache<T> {
    pub fn build(store: &ParamStore<T>, cfg: &ModelConfig, samples: &[Sample<T>]) -> Result<Self> {
        if let Some(s) = samples.iter().find(|s| !s.labelled) {
            return Err(Error::Argument(format!("sample {} is unlabelled", s.id)));
        }
        Ok(FeatureCache {
            feats: cache_features(store, cfg, samples)?,
            locs: samples.iter().map(|s| s.centres()).collect(),
            targets: samples
                .iter()
                .map(|s| pose_targets(&s.annotations, cfg.input_size))
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.feats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feats.is_empty()
    }

    /// Mean over samples of the mean-pose smooth-L1 at the annotated centres.
    pub fn mean_pose_loss(&self, store: &ParamStore<T>, cfg: &ModelConfig) -> Result<f64> {
        let mut total = 0.0;
        for i in 0..self.len() {
            let mut tape = Tape::inference();
            let pyr = Pyramid::constants(&mut tape, &self.feats[i]);
            let pv = posenet_forward(&mut tape, store, cfg, &pyr, &self.locs[i])?;
            let outs = pose_outputs(&tape, &pv.stages);
            let t = self.targets[i].data();
            total += mean(outs.iter().enumerate().map(|(j, o)| {
                pose_smooth_l1(
                    o.mean_pose.map(|v| v.as_f64()),
                    [t[3 * j], t[3 * j + 1], t[3 * j + 2]].map(|v| v.as_f64()),
                )
            }));
        }
        Ok(if self.is_empty() {
            f64::NAN
        } else {
            total / self.len() as f64
        })
    }
}

/// Mean-pose loss at the annotated centres of `samples`.
pub fn gt_pose_loss<T: Scalar>(
    store: &ParamStore<T>,
    cfg: &ModelConfig,
    samples: &[Sample<T>],
) -> Result<f64> {
    FeatureCache::build(store, cfg, samples)?.mean_pose_loss(store, cfg)
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
