use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::log::TrainLog;
use crate::autodiff::{checkpoint, make_optimizer, Optimizer, ParamStore, Tape, Tensor, Var};
use crate::data::{augment, Sample};
use crate::error::{Error, Result};
use crate::geometry::{heatmap_target, GraspRect};
use crate::model::{
    encode, init_locnet, init_params, locnet_forward, normalize_pose, posenet_forward, zero_depth,
    ModelConfig, Pyramid, BACKBONE, LOCNET,
};
use crate::scalar::Scalar;

/// Depth input the model expects for `s`: its depth map, zeros when the model has a
/// depth branch but the sample has none, nothing for RGB-only models.
pub fn depth_input<'a, T: Scalar>(
    cfg: &ModelConfig,
    s: &'a Sample<T>,
    zeros: &'a Tensor<T>,
) -> Option<&'a Tensor<T>> {
    if !cfg.use_depth_branch {
        return None;
    }
    Some(s.depth.as_ref().unwrap_or(zeros))
}

/// Normalised `(θ̂, ŵ, ĥ)` targets, one row per annotation.
pub fn pose_targets<T: Scalar>(anns: &[GraspRect<T>], input_size: usize) -> Tensor<T> {
    let data = anns
        .iter()
        .flat_map(|a| normalize_pose(a, input_size))
        .collect();
    Tensor::new(&[anns.len(), 3], data).expect("three values per annotation")
}

/// Sum over stages of the smooth-L1 pose loss, summed over the sample's annotations.
pub fn supervised_pose_loss<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    cfg: &ModelConfig,
    feats: &Pyramid,
    sample: &Sample<T>,
) -> Result<Var> {
    let locs = sample.centres();
    let targets = pose_targets(&sample.annotations, cfg.input_size);
    let pv = posenet_forward(tape, store, cfg, feats, &locs)?;
    let mut per_stage = Vec::with_capacity(4);
    for s in pv.stages {
        per_stage.push(tape.smooth_l1(s, &targets)?);
    }
    let a = tape.add(per_stage[0], per_stage[1])?;
    let b = tape.add(per_stage[2], per_stage[3])?;
    let total = tape.add(a, b)?;
    // smooth_l1 averages over annotations × 3; scale back to a sum over annotations.
    tape.scale(total, T::lit(locs.len() as f64))
}

/// Mean of `losses`, or `None` when empty.
pub(crate) fn mean_loss<T: Scalar>(tape: &mut Tape<T>, losses: &[Var]) -> Result<Option<Var>> {
    let Some((&first, rest)) = losses.split_first() else {
        return Ok(None);
    };
    let mut total = first;
    for &l in rest {
        total = tape.add(total, l)?;
    }
    Ok(Some(tape.scale(total, T::lit(1.0 / losses.len() as f64))?))
}

/// One optimiser step on the mean supervised pose loss of `batch`. Returns the loss
/// before the step, or `None` if no sample carried annotations.
pub fn pose_batch_step<T: Scalar>(
    store: &mut ParamStore<T>,
    cfg: &ModelConfig,
    batch: &[Sample<T>],
    opt: &mut dyn Optimizer<T>,
    lr: f64,
) -> Result<Option<f64>> {
    let zeros = zero_depth(cfg);
    let mut tape = Tape::new();
    let mut losses = Vec::with_capacity(batch.len());
    for s in batch.iter().filter(|s| s.labelled) {
        let feats = encode(&mut tape, store, cfg, &s.rgb, depth_input(cfg, s, &zeros))?;
        losses.push(supervised_pose_loss(&mut tape, store, cfg, &feats, s)?);
    }
    let Some(loss) = mean_loss(&mut tape, &losses)? else {
        return Ok(None);
    };
    store.zero_grad();
    tape.backward_into(loss, store)?;
    opt.step(store, T::lit(lr));
    Ok(Some(tape.value(loss).item().as_f64()))
}

fn check_labelled<T>(data: &[Sample<T>], what: &str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Argument(format!("{what}: empty training set")));
    }
    if let Some(s) = data.iter().find(|s| !s.labelled) {
        return Err(Error::Argument(format!(
            "{what}: sample {} is unlabelled",
            s.id
        )));
    }
    Ok(())
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

fn maybe_checkpoint<T: Scalar>(
    store: &ParamStore<T>,
    cfg: &TrainConfig,
    dir: Option<&Path>,
    stage: &str,
    epoch: usize,
) -> Result<()> {
    if let Some(dir) = dir {
        if cfg.checkpoint_every > 0 && (epoch + 1).is_multiple_of(cfg.checkpoint_every) {
            checkpoint::save(
                store,
                &dir.join(format!("{stage}_epoch{:04}.ckpt", epoch + 1)),
            )?;
        }
    }
    Ok(())
}

/// First training stage: backbone and pose heads on annotated centres, LocNet untouched.
/// Batches are drawn without replacement, `⌈N / batch_size⌉` steps per epoch.
pub fn train_posenet<T: Scalar>(
    store: &mut ParamStore<T>,
    model: &ModelConfig,
    data: &[Sample<T>],
    eval: &[Sample<T>],
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainLog> {
    cfg.validate()?;
    model.validate()?;
    check_labelled(data, "train_posenet")?;
    store.set_all_trainable(true);
    store.set_trainable(LOCNET, false);
    let mut opt = make_optimizer::<T>(cfg.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = TrainLog::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(cfg.lr_pose, epoch);
        for chunk in shuffled(data.len(), &mut rng).chunks(cfg.batch_size) {
            let batch: Vec<Sample<T>> = chunk
                .iter()
                .map(|&i| augment(&data[i], &cfg.augment, rng.random()).0)
                .collect();
            if let Some(loss) = pose_batch_step(store, model, &batch, opt.as_mut(), lr)? {
                log.push(step, epoch, "train", "pose_smooth_l1", loss);
            }
            step += 1;
        }
        if !eval.is_empty() {
            let l = super::eval::gt_pose_loss(store, model, eval)?;
            log.push(step, epoch, "eval", "mean_pose_smooth_l1", l);
        }
        log::info!("pose epoch {} lr {lr:.2e} done", epoch + 1);
        maybe_checkpoint(store, cfg, checkpoint_dir, "pose", epoch)?;
    }
    Ok(log)
}

/// Backbone features of every sample under the current parameters.
pub fn cache_features<T: Scalar>(
    store: &ParamStore<T>,
    cfg: &ModelConfig,
    samples: &[Sample<T>],
) -> Result<Vec<[Tensor<T>; 4]>> {
    let zeros = zero_depth(cfg);
    samples
        .iter()
        .map(|s| {
            let mut tape = Tape::inference();
            let feats = encode(&mut tape, store, cfg, &s.rgb, depth_input(cfg, s, &zeros))?;
            Ok(feats.tensors(&tape))
        })
        .collect()
}

/// LocNet target map for a sample, shaped like the decoder output.
pub fn location_target<T: Scalar>(cfg: &ModelConfig, s: &Sample<T>) -> Result<Tensor<T>> {
    let n = cfg.heatmap_size();
    let hm = heatmap_target(&s.annotations, n, n, cfg.heatmap_stride, T::lit(cfg.r_ball))?;
    hm.grid().clone().reshape(&[1, n, n])
}

/// Second training stage: backbone frozen (features computed once), decoder trained
/// with binary cross-entropy against the annotation balls. Initialises the decoder if
/// the store has none.
pub fn train_locnet<T: Scalar>(
    store: &mut ParamStore<T>,
    model: &ModelConfig,
    data: &[Sample<T>],
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainLog> {
    cfg.validate()?;
    model.validate()?;
    check_labelled(data, "train_locnet")?;
    let layout = init_params::<T>(model, 0)?;
    if let Some(name) = layout
        .names()
        .filter(|n| n.starts_with(BACKBONE))
        .find(|n| !store.contains(n))
    {
        return Err(Error::Config(format!("backbone parameter {name} missing")));
    }
    if !store.names().any(|n| n.starts_with(LOCNET)) {
        init_locnet(store, model, cfg.seed);
    }
    store.set_all_trainable(false);
    store.set_trainable(LOCNET, true);

    let feats = cache_features(store, model, data)?;
    let targets: Vec<Tensor<T>> = data
        .iter()
        .map(|s| location_target(model, s))
        .collect::<Result<_>>()?;
    let mut opt = make_optimizer::<T>(cfg.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = TrainLog::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(cfg.lr_loc, epoch);
        for chunk in shuffled(data.len(), &mut rng).chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let mut losses = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let pyr = Pyramid::constants(&mut tape, &feats[i]);
                let hm = locnet_forward(&mut tape, store, &pyr)?;
                losses.push(tape.bce(hm, &targets[i])?);
            }
            let loss = mean_loss(&mut tape, &losses)?.expect("non-empty batch");
            store.zero_grad();
            tape.backward_into(loss, store)?;
            opt.step(store, T::lit(lr));
            log.push(
                step,
                epoch,
                "train",
                "loc_bce",
                tape.value(loss).item().as_f64(),
            );
            step += 1;
        }
        log::info!("loc epoch {} lr {lr:.2e} done", epoch + 1);
        maybe_checkpoint(store, cfg, checkpoint_dir, "loc", epoch)?;
    }
    store.set_all_trainable(true);
    Ok(log)
}
