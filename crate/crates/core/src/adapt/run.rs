use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{AdaptConfig, Method, ThresholdPolicy};
use super::consistency::consistency_loss;
use super::filter::{
    confidence_filter, median_uncertainty, score_pool, PseudoLabel, UnlabelledPool,
};
use super::teacher::{ema_update, TeacherStudent};
use crate::autodiff::{make_optimizer, Optimizer, ParamStore, Tape};
use crate::data::{augment, AugmentConfig, Sample};
use crate::error::{Error, Result};
use crate::model::{encode, posenet_forward, zero_depth, ModelConfig, Pyramid, POSENET};
use crate::scalar::Scalar;
use crate::train::{depth_input, supervised_pose_loss, train_locnet, FeatureCache, TrainConfig};

/// One row of the adaptation curve; epoch 0 is the model before adaptation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptRow {
    pub epoch: usize,
    pub method: String,
    /// Mean-pose smooth-L1 on the evaluation set at annotated centres.
    pub eval_loss: f64,
    pub pool_size: usize,
    pub alpha: f64,
    pub threshold: f64,
    /// Same, summed over the four stage outputs instead of the mean pose.
    pub eval_stage_loss: f64,
    /// Mean-pose loss on the labelled adaptation set.
    pub labelled_loss: f64,
}

#[derive(Clone, Debug)]
pub struct AdaptOutcome<T> {
    pub curve: Vec<AdaptRow>,
    pub best_epoch: usize,
    pub best: ParamStore<T>,
    pub state: TeacherStudent<T>,
}

impl<T> AdaptOutcome<T> {
    pub fn final_loss(&self) -> f64 {
        self.curve.last().map_or(f64::NAN, |r| r.eval_loss)
    }

    pub fn best_loss(&self) -> f64 {
        self.curve[self.best_epoch].eval_loss
    }
}

pub fn write_curve(rows: &[AdaptRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Supervised LocNet fine-tuning on labelled target samples before adaptation; the
/// backbone stays frozen.
pub fn finetune_locnet<T: Scalar>(
    store: &mut ParamStore<T>,
    model: &ModelConfig,
    labelled: &[Sample<T>],
    cfg: &TrainConfig,
) -> Result<()> {
    train_locnet(store, model, labelled, cfg, None).map(|_| ())
}

/// Labelled data with frozen features, as the supervised term sees it.
struct LabelledSet<'a, T> {
    samples: &'a [Sample<T>],
    cache: FeatureCache<T>,
}

/// One adaptation step: summed supervised loss on the labelled batch plus the weighted
/// summed consistency loss on the pseudo batch, a step on the pose heads, then the
/// teacher update. Returns the loss before the step, or `None` (and no step) when
/// augmentation pushed every annotated centre out of frame.
#[allow(clippy::too_many_arguments)]
fn adapt_step<T: Scalar>(
    ts: &mut TeacherStudent<T>,
    model: &ModelConfig,
    cfg: &AdaptConfig,
    labelled: &LabelledSet<'_, T>,
    batch: &[(usize, u64)],
    pseudo: &[(&Sample<T>, &PseudoLabel<T>, u64, u64)],
    opt: &mut dyn Optimizer<T>,
) -> Result<Option<f64>> {
    let mut tape = Tape::new();
    let mut total = None;
    let mut add = |tape: &mut Tape<T>, v| -> Result<()> {
        total = Some(match total {
            None => v,
            Some(t) => tape.add(t, v)?,
        });
        Ok(())
    };
    let plain = cfg.augment_labelled == AugmentConfig::none();
    let zeros = zero_depth(model);
    for &(i, seed) in batch {
        if plain {
            let pyr = Pyramid::constants(&mut tape, &labelled.cache.feats[i]);
            let l =
                supervised_pose_loss(&mut tape, &ts.student, model, &pyr, &labelled.samples[i])?;
            add(&mut tape, l)?;
            continue;
        }
        let (s, _) = augment(&labelled.samples[i], &cfg.augment_labelled, seed);
        if !s.labelled {
            continue;
        }
        // Backbone is frozen: encode off-tape and enter the features as constants.
        let mut enc = Tape::inference();
        let feats = encode(
            &mut enc,
            &ts.student,
            model,
            &s.rgb,
            depth_input(model, &s, &zeros),
        )?;
        let pyr = Pyramid::constants(&mut tape, &feats.tensors(&enc));
        let l = supervised_pose_loss(&mut tape, &ts.student, model, &pyr, &s)?;
        add(&mut tape, l)?;
    }
    for &(s, p, mu, mu_prime) in pseudo {
        let c = consistency_loss(
            &mut tape,
            &ts.student,
            &ts.teacher,
            model,
            s,
            &p.locs,
            &cfg.augment,
            mu,
            mu_prime,
        )?;
        if let Some(c) = c {
            let c = tape.scale(c, T::lit(cfg.consistency_weight))?;
            add(&mut tape, c)?;
        }
    }
    let Some(loss) = total else {
        return Ok(None);
    };
    ts.student.zero_grad();
    tape.backward_into(loss, &mut ts.student)?;
    opt.step(&mut ts.student, T::lit(cfg.lr));
    ema_update(&mut ts.teacher, &ts.student, cfg.alpha_at(ts.step))?;
    ts.step += 1;
    Ok(Some(tape.value(loss).item().as_f64()))
}

fn stage_loss<T: Scalar>(
    store: &ParamStore<T>,
    model: &ModelConfig,
    cache: &FeatureCache<T>,
) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..cache.len() {
        let mut tape = Tape::inference();
        let pyr = Pyramid::constants(&mut tape, &cache.feats[i]);
        let pv = posenet_forward(&mut tape, store, model, &pyr, &cache.locs[i])?;
        for s in pv.stages {
            let l = tape.smooth_l1(s, &cache.targets[i])?;
            total += tape.value(l).item().as_f64();
        }
    }
    Ok(total / cache.len().max(1) as f64)
}

fn check_labelled<T>(samples: &[Sample<T>], what: &str) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Argument(format!("{what} set is empty")));
    }
    match samples.iter().find(|s| !s.labelled) {
        Some(s) => Err(Error::Argument(format!(
            "{what} sample {} is unlabelled",
            s.id
        ))),
        None => Ok(()),
    }
}

/// Threshold in force for a method; direct training admits nothing.
fn resolve_threshold<T: Scalar>(
    source: &ParamStore<T>,
    model: &ModelConfig,
    labelled: &[Sample<T>],
    cfg: &AdaptConfig,
) -> Result<f64> {
    Ok(match (cfg.method, cfg.threshold) {
        (Method::Direct, _) => 0.0,
        (Method::MeanTeacher, _) => f64::INFINITY,
        (Method::ConfidenceMt, ThresholdPolicy::Fixed(t)) => t,
        (Method::ConfidenceMt, ThresholdPolicy::Auto) => {
            let on_labelled = UnlabelledPool::build(source, model, labelled, cfg.top_k)?;
            match median_uncertainty(&score_pool(source, model, &on_labelled)?) {
                Some(t) => t,
                None => {
                    log::warn!("no peaks on the labelled set; confidence threshold disabled");
                    f64::INFINITY
                }
            }
        }
    })
}

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Adapts the pose heads of `source` (LocNet already fine-tuned) to the labelled and
/// unlabelled target data, refreshing the pseudo-labelled pool from the teacher once
/// per epoch and logging the student's evaluation loss after every epoch.
///
/// Labelled batches and pseudo-label draws use separate random streams, so switching
/// the consistency term off reproduces direct training bit for bit.
pub fn run_adaptation<T: Scalar>(
    source: &ParamStore<T>,
    model: &ModelConfig,
    labelled: &[Sample<T>],
    unlabelled: &[Sample<T>],
    eval: &[Sample<T>],
    cfg: &AdaptConfig,
) -> Result<AdaptOutcome<T>> {
    cfg.validate()?;
    model.validate()?;
    check_labelled(labelled, "labelled")?;
    check_labelled(eval, "evaluation")?;

    let mut ts = TeacherStudent::new(source.clone());
    ts.student.set_all_trainable(false);
    ts.student.set_trainable(POSENET, true);
    let lab = LabelledSet {
        samples: labelled,
        cache: FeatureCache::build(source, model, labelled)?,
    };
    let eval_cache = FeatureCache::build(source, model, eval)?;
    let use_pseudo =
        cfg.method != Method::Direct && cfg.consistency_weight > 0.0 && !unlabelled.is_empty();
    let threshold = resolve_threshold(source, model, labelled, cfg)?;
    let pool = if use_pseudo {
        Some(UnlabelledPool::build(source, model, unlabelled, cfg.top_k)?)
    } else {
        None
    };
    let filter = |teacher: &ParamStore<T>| -> Result<Vec<PseudoLabel<T>>> {
        match &pool {
            Some(p) => confidence_filter(teacher, model, p, threshold),
            None => Ok(Vec::new()),
        }
    };

    let mut opt = make_optimizer::<T>(cfg.optimizer);
    let mut rng_l = seeded(cfg.seed, 1);
    let mut rng_p = seeded(cfg.seed, 2);
    let steps = if cfg.steps_per_epoch > 0 {
        cfg.steps_per_epoch
    } else {
        labelled.len().div_ceil(cfg.batch_labelled)
    };
    let n_batch = cfg.batch_labelled.min(labelled.len());
    let row = |epoch, ts: &TeacherStudent<T>, pool_size| -> Result<AdaptRow> {
        Ok(AdaptRow {
            epoch,
            method: cfg.method.to_string(),
            eval_loss: eval_cache.mean_pose_loss(&ts.student, model)?,
            pool_size,
            alpha: cfg.alpha_at(ts.step),
            threshold,
            eval_stage_loss: stage_loss(&ts.student, model, &eval_cache)?,
            labelled_loss: lab.cache.mean_pose_loss(&ts.student, model)?,
        })
    };

    let mut curve = vec![row(0, &ts, filter(&ts.teacher)?.len())?];
    let mut best = (0, ts.student.clone());
    for epoch in 1..=cfg.epochs {
        let pseudo_pool = filter(&ts.teacher)?;
        for _ in 0..steps {
            let mut picks = index::sample(&mut rng_l, labelled.len(), n_batch).into_vec();
            picks.sort_unstable();
            let batch: Vec<(usize, u64)> = picks.into_iter().map(|i| (i, rng_l.random())).collect();
            let mut pseudo = Vec::new();
            if !pseudo_pool.is_empty() {
                let k = cfg.batch_pseudo.min(pseudo_pool.len());
                let mut picks = index::sample(&mut rng_p, pseudo_pool.len(), k).into_vec();
                picks.sort_unstable();
                for j in picks {
                    let p = &pseudo_pool[j];
                    pseudo.push((&unlabelled[p.index], p, rng_p.random(), rng_p.random()));
                }
            }
            adapt_step(&mut ts, model, cfg, &lab, &batch, &pseudo, opt.as_mut())?;
        }
        let r = row(epoch, &ts, pseudo_pool.len())?;
        if r.eval_loss < curve[best.0].eval_loss {
            best = (epoch, ts.student.clone());
        }
        log::info!(
            "{} epoch {epoch}: eval {:.5} pool {}",
            cfg.method,
            r.eval_loss,
            r.pool_size
        );
        curve.push(r);
    }
    Ok(AdaptOutcome {
        curve,
        best_epoch: best.0,
        best: best.1,
        state: ts,
    })
}

/// Runs each method from the same starting point and data.
pub fn compare_methods<T: Scalar>(
    source: &ParamStore<T>,
    model: &ModelConfig,
    labelled: &[Sample<T>],
    unlabelled: &[Sample<T>],
    eval: &[Sample<T>],
    base: &AdaptConfig,
    methods: &[Method],
) -> Result<Vec<(Method, AdaptOutcome<T>)>> {
    methods
        .iter()
        .map(|&method| {
            let cfg = AdaptConfig {
                method,
                ..base.clone()
            };
            run_adaptation(source, model, labelled, unlabelled, eval, &cfg).map(|o| (method, o))
        })
        .collect()
}

/// File name of one comparison curve, e.g. `adapt_cmt_n9.csv`.
pub fn curve_file_name(method: Method, n_labelled: usize) -> String {
    format!("adapt_{}_n{n_labelled}.csv", method.short_name())
}

/// Deterministic subset of `n` samples chosen by `seed`, kept in id order.
pub fn subsample<T: Clone>(samples: &[T], n: usize, seed: u64) -> Vec<T> {
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.shuffle(&mut seeded(seed, 3));
    let mut keep: Vec<usize> = idx.into_iter().take(n).collect();
    keep.sort_unstable();
    keep.into_iter().map(|i| samples[i].clone()).collect()
}
