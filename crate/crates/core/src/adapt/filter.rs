use crate::autodiff::{ParamStore, Tape, Tensor};
use crate::data::Sample;
use crate::error::Result;
use crate::geometry::{nms_peaks, Heatmap};
use crate::model::{locnet_forward, pose_outputs, posenet_forward, ModelConfig, Pyramid};
use crate::scalar::Scalar;
use crate::train::cache_features;

/// Unlabelled observations with backbone features and heatmap peaks computed once;
/// both stay fixed while only the pose heads adapt.
#[derive(Clone, Debug)]
pub struct UnlabelledPool<T> {
    pub feats: Vec<[Tensor<T>; 4]>,
    /// Up to `top_k` peak locations per sample, best first.
    pub peaks: Vec<Vec<(T, T)>>,
}

impl<T: Scalar> UnlabelledPool<T> {
    pub fn build(
        store: &ParamStore<T>,
        cfg: &ModelConfig,
        samples: &[Sample<T>],
        top_k: usize,
    ) -> Result<Self> {
        let feats = cache_features(store, cfg, samples)?;
        let mut peaks = Vec::with_capacity(feats.len());
        for f in &feats {
            let mut tape = Tape::inference();
            let pyr = Pyramid::constants(&mut tape, f);
            let hm = locnet_forward(&mut tape, store, &pyr)?;
            let map = Heatmap::new(tape.value(hm).clone(), cfg.heatmap_stride)?;
            let p = nms_peaks(&map, T::lit(cfg.nms_threshold), cfg.nms_window, top_k)?;
            peaks.push(p.iter().map(|p| (p.x, p.y)).collect());
        }
        Ok(UnlabelledPool { feats, peaks })
    }

    pub fn len(&self) -> usize {
        self.feats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feats.is_empty()
    }
}

/// An unlabelled sample admitted to the pseudo-labelled pool.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabel<T> {
    /// Position in the unlabelled set.
    pub index: usize,
    pub locs: Vec<(T, T)>,
    /// Teacher mean poses at `locs`.
    pub poses: Vec<[T; 3]>,
    /// Mean `m_uc` over `locs`.
    pub uncertainty: f64,
}

/// Teacher uncertainty of every pooled sample that has at least one peak.
pub fn score_pool<T: Scalar>(
    teacher: &ParamStore<T>,
    cfg: &ModelConfig,
    pool: &UnlabelledPool<T>,
) -> Result<Vec<PseudoLabel<T>>> {
    let mut out = Vec::new();
    for (i, (f, locs)) in pool.feats.iter().zip(&pool.peaks).enumerate() {
        if locs.is_empty() {
            continue;
        }
        let mut tape = Tape::inference();
        let pyr = Pyramid::constants(&mut tape, f);
        let pv = posenet_forward(&mut tape, teacher, cfg, &pyr, locs)?;
        let outs = pose_outputs(&tape, &pv.stages);
        let uncertainty = outs.iter().map(|o| o.m_uc.as_f64()).sum::<f64>() / outs.len() as f64;
        out.push(PseudoLabel {
            index: i,
            locs: locs.clone(),
            poses: outs.iter().map(|o| o.mean_pose).collect(),
            uncertainty,
        });
    }
    Ok(out)
}

/// Keeps samples whose mean peak uncertainty is strictly below `threshold`.
/// An infinite threshold admits every sample with a peak; zero admits none.
pub fn confidence_filter<T: Scalar>(
    teacher: &ParamStore<T>,
    cfg: &ModelConfig,
    pool: &UnlabelledPool<T>,
    threshold: f64,
) -> Result<Vec<PseudoLabel<T>>> {
    let mut scored = score_pool(teacher, cfg, pool)?;
    scored.retain(|p| p.uncertainty < threshold);
    Ok(scored)
}

/// Median of the per-sample uncertainties (mean of the two middle values for even counts).
pub fn median_uncertainty<T>(scored: &[PseudoLabel<T>]) -> Option<f64> {
    let mut v: Vec<f64> = scored.iter().map(|p| p.uncertainty).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}
