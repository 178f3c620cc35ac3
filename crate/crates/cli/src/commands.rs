use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use graspmt::adapt::{curve_file_name, finetune_locnet, run_adaptation, subsample, write_curve};
use graspmt::autodiff::checkpoint;
use graspmt::data::cornell::load_files;
use graspmt::data::{load_splits, write_synth_dir, LoadOptions, LoadedSplits, SynthConfig};
use graspmt::model::{detect_with_heatmap, init_params, zero_depth, ModelConfig};
use graspmt::train::{depth_input, evaluate, train_locnet, train_posenet};
use graspmt::{Params32, Sample32};
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, GrayImage, ImageEncoder, Luma};
use log::info;
use serde::Serialize;

use crate::config::Config;
use crate::manifest::RunManifest;
use crate::{
    AdaptArgs, DetectArgs, EvalArgs, Shift, Split, Stage, SynthArgs, TrainArgs, UsageError,
};

/// Creates the run directory, refusing to reuse a non-empty one unless forced.
fn prepare_out(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !dir.is_dir() {
            bail!(UsageError(format!(
                "{} exists and is not a directory",
                dir.display()
            )));
        }
        let non_empty = fs::read_dir(dir)?.next().is_some();
        if non_empty && !force {
            bail!(UsageError(format!(
                "{} is not empty (use --force to replace it)",
                dir.display()
            )));
        }
        if non_empty {
            fs::remove_dir_all(dir).with_context(|| format!("clearing {}", dir.display()))?;
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

/// JSON model description kept next to each checkpoint. Periodic checkpoints share
/// the run's `model.json`.
pub fn sidecar(ckpt: &Path) -> PathBuf {
    let own = ckpt.with_extension("json");
    if own.exists() {
        return own;
    }
    ckpt.with_file_name("model.json")
}

fn save_model(store: &Params32, model: &ModelConfig, ckpt: &Path) -> Result<()> {
    checkpoint::save(store, ckpt)?;
    model.save_json(&ckpt.with_extension("json"))?;
    Ok(())
}

/// Loads a checkpoint with its sidecar and checks that they describe the same network.
fn load_model(ckpt: &Path) -> Result<(Params32, ModelConfig)> {
    let model = ModelConfig::load_json(&sidecar(ckpt))
        .with_context(|| format!("model description for {}", ckpt.display()))?;
    let store: Params32 = checkpoint::load(ckpt)?;
    let reference = init_params::<f32>(&model, 0)?;
    let mut missing: Vec<&str> = reference.names().filter(|n| !store.contains(n)).collect();
    missing.truncate(3);
    if !missing.is_empty() {
        bail!(
            "{} lacks parameters of its model description: {}",
            ckpt.display(),
            missing.join(", ")
        );
    }
    for p in reference.iter() {
        let got = store.by_name(&p.name).map(|q| q.value.shape());
        if got != Some(p.value.shape()) {
            bail!(
                "{}: parameter {} has shape {:?}, model description expects {:?}",
                ckpt.display(),
                p.name,
                got.unwrap_or(&[]),
                p.value.shape()
            );
        }
    }
    Ok((store, model))
}

fn load_data(dir: &Path, model: &ModelConfig) -> Result<LoadedSplits<f32>> {
    let opts = LoadOptions {
        size: Some(model.input_size),
        ..LoadOptions::default()
    };
    load_splits(dir, &opts).with_context(|| format!("loading dataset {}", dir.display()))
}

#[derive(Serialize)]
struct SynthSettings<'a> {
    labelled: usize,
    unlabelled: usize,
    synth: &'a SynthConfig,
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let mut cfg = match a.shift {
        Shift::Source => SynthConfig::source(a.seed),
        Shift::Target => SynthConfig::target(a.seed),
    };
    cfg.image_size = a.size;
    if let Some(n) = a.eval {
        cfg.n_eval = n;
    }
    cfg.validate()?;
    prepare_out(&a.out, a.force)?;
    let mut m = RunManifest::new(
        a.seed,
        &SynthSettings {
            labelled: a.labelled,
            unlabelled: a.unlabelled,
            synth: &cfg,
        },
    )?;
    m.artifact("manifest.json");
    m.artifact("manifest.csv");
    m.write(&a.out)?;
    let ds = write_synth_dir(&cfg, a.labelled, a.unlabelled, &a.out)?;
    println!(
        "{} labelled, {} unlabelled, {} eval samples in {}",
        ds.splits.labelled.len(),
        ds.splits.unlabelled.len(),
        ds.splits.eval.len(),
        a.out.display()
    );
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut cfg = Config::load(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = a.lr {
        match a.stage {
            Stage::Pose => cfg.train.lr_pose = lr,
            Stage::Loc => cfg.train.lr_loc = lr,
        }
    }
    cfg.train.validate()?;
    let init = match (a.stage, &a.init_from) {
        (Stage::Loc, None) => bail!(UsageError(
            "the loc stage needs --init-from with a pose-stage checkpoint".into()
        )),
        (_, Some(p)) => Some(load_model(p)?),
        (Stage::Pose, None) => None,
    };
    if let Some((_, model)) = &init {
        cfg.model = model.clone();
    }
    cfg.model.validate()?;
    let data = load_data(&a.data.data, &cfg.model)?;
    if data.labelled.is_empty() {
        bail!("{} has no labelled samples", a.data.data.display());
    }

    prepare_out(&a.out, a.force)?;
    let stage = match a.stage {
        Stage::Pose => "pose",
        Stage::Loc => "loc",
    };
    let log_name = format!("train_{stage}.csv");
    let mut m = RunManifest::new(cfg.train.seed, &cfg)?;
    m.input(&a.data.data)?;
    if let Some(p) = &a.init_from {
        m.input(p)?;
    }
    m.artifact("model.ckpt");
    m.artifact("model.json");
    m.artifact(log_name.clone());
    m.write(&a.out)?;

    let ckpt_dir = (cfg.train.checkpoint_every > 0).then_some(a.out.as_path());
    let (store, log) = match init {
        None => {
            let mut store = init_params::<f32>(&cfg.model, cfg.train.seed)?;
            let log = train_posenet(
                &mut store,
                &cfg.model,
                &data.labelled,
                &data.eval,
                &cfg.train,
                ckpt_dir,
            )?;
            (store, log)
        }
        Some((mut store, _)) => {
            let log = train_locnet(&mut store, &cfg.model, &data.labelled, &cfg.train, ckpt_dir)?;
            (store, log)
        }
    };
    log.write_csv(&a.out.join(&log_name))?;
    save_model(&store, &cfg.model, &a.out.join("model.ckpt"))?;
    println!(
        "{stage} stage: {} epochs on {} samples -> {}",
        cfg.train.epochs,
        data.labelled.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct AdaptSummary {
    method: String,
    n_labelled: usize,
    best_epoch: usize,
    best_loss: f64,
    final_loss: f64,
}

pub fn adapt(a: &AdaptArgs) -> Result<()> {
    let mut cfg = Config::load(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.adapt.seed = seed;
        cfg.finetune.seed = seed;
    }
    if let Some(e) = a.epochs {
        cfg.adapt.epochs = e;
    }
    if let Some(t) = a.threshold {
        cfg.adapt.threshold = t;
    }
    cfg.adapt.validate()?;
    let (source, model) = load_model(&a.source_ckpt)?;
    cfg.model = model.clone();
    let data = load_data(&a.data.data, &model)?;
    if data.eval.is_empty() {
        bail!("{} has no eval split", a.data.data.display());
    }
    if a.labelled_n == 0 || a.labelled_n > data.labelled.len() {
        bail!(UsageError(format!(
            "--labelled-n must lie in 1..={} for this dataset",
            data.labelled.len()
        )));
    }
    let loc_n = a
        .loc_labelled_n
        .unwrap_or(a.labelled_n)
        .min(data.labelled.len());
    let seed = cfg.adapt.seed;

    prepare_out(&a.out, a.force)?;
    let mut m = RunManifest::new(seed, &cfg)?;
    m.input(&a.data.data)?;
    m.input(&a.source_ckpt)?;
    for &method in &a.method.0 {
        let csv = curve_file_name(method, a.labelled_n);
        m.artifact(csv.clone());
        m.artifact(csv.replace(".csv", ".ckpt"));
        m.artifact(csv.replace(".csv", ".json"));
    }
    m.artifact("summary.csv");
    m.write(&a.out)?;

    let labelled = subsample(&data.labelled, a.labelled_n, seed);
    let mut prepared = source;
    if loc_n > 0 {
        let loc_set = subsample(&data.labelled, loc_n, seed);
        finetune_locnet(&mut prepared, &model, &loc_set, &cfg.finetune)?;
        info!("LocNet fine-tuned on {loc_n} labelled samples");
    }
    let mut summary = csv::Writer::from_path(a.out.join("summary.csv"))?;
    for &method in &a.method.0 {
        let run_cfg = graspmt::adapt::AdaptConfig {
            method,
            ..cfg.adapt.clone()
        };
        let out = run_adaptation(
            &prepared,
            &model,
            &labelled,
            &data.unlabelled,
            &data.eval,
            &run_cfg,
        )?;
        let csv = curve_file_name(method, a.labelled_n);
        write_curve(&out.curve, &a.out.join(&csv))?;
        save_model(&out.best, &model, &a.out.join(csv.replace(".csv", ".ckpt")))?;
        let row = AdaptSummary {
            method: method.to_string(),
            n_labelled: a.labelled_n,
            best_epoch: out.best_epoch,
            best_loss: out.best_loss(),
            final_loss: out.final_loss(),
        };
        println!(
            "{:<14} best {:.6} at epoch {:>3}  final {:.6}",
            row.method, row.best_loss, row.best_epoch, row.final_loss
        );
        summary.serialize(row)?;
    }
    summary.flush()?;
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let (store, model) = load_model(&a.ckpt)?;
    let data = load_data(&a.data.data, &model)?;
    let split = a.split.unwrap_or(if data.eval.is_empty() {
        Split::Labelled
    } else {
        Split::Eval
    });
    let samples = match split {
        Split::Labelled => &data.labelled,
        Split::Unlabelled => &data.unlabelled,
        Split::Eval => &data.eval,
    };
    if samples.is_empty() || samples.iter().any(|s| !s.labelled) {
        bail!(
            "the {split:?} split of {} has no labelled samples to score",
            a.data.data.display()
        );
    }
    let top_n = a.top_n.unwrap_or(model.max_peaks);
    if top_n == 0 {
        bail!(UsageError("--top-n must be at least 1".into()));
    }
    prepare_out(&a.out, a.force)?;
    let cfg = Config {
        model: model.clone(),
        ..Config::default()
    };
    let mut m = RunManifest::new(0, &cfg)?;
    m.input(&a.data.data)?;
    m.input(&a.ckpt)?;
    m.artifact("eval.json");
    m.artifact("eval.csv");
    m.write(&a.out)?;

    let report = evaluate(&store, &model, samples, top_n)?;
    report.write_json(&a.out.join("eval.json"))?;
    report.write_csv(&a.out.join("eval.csv"))?;
    println!("samples                {}", report.n_samples);
    println!("success_rate           {:.6}", report.success_rate);
    println!("pose_loss_all          {:.6}", report.pose_loss_all);
    println!(
        "pose_loss_most_certain {:.6}",
        report.pose_loss_most_certain
    );
    Ok(())
}

#[derive(Serialize)]
struct DetectionRow {
    rank: usize,
    x: f32,
    y: f32,
    theta: f32,
    w: f32,
    h: f32,
    score: f32,
    m_uc: f32,
    x0: f32,
    y0: f32,
    x1: f32,
    y1: f32,
    x2: f32,
    y2: f32,
    x3: f32,
    y3: f32,
}

pub fn detect(a: &DetectArgs) -> Result<()> {
    if a.top_n == 0 {
        bail!(UsageError("--top-n must be at least 1".into()));
    }
    let (store, model) = load_model(&a.ckpt)?;
    let opts = LoadOptions {
        size: Some(model.input_size),
        ..LoadOptions::default()
    };
    let sample: Sample32 = load_files("input", &a.image, a.depth.as_deref(), None, &opts)?;
    if let Some(dir) = &a.out {
        prepare_out(dir, a.force)?;
        let cfg = Config {
            model: model.clone(),
            ..Config::default()
        };
        let mut m = RunManifest::new(0, &cfg)?;
        m.input(&a.ckpt)?;
        m.input(&a.image)?;
        if let Some(d) = &a.depth {
            m.input(d)?;
        }
        m.artifact("heatmap.pgm");
        m.artifact("detections.csv");
        m.write(dir)?;
    }

    let zeros = zero_depth(&model);
    let depth = depth_input(&model, &sample, &zeros);
    let (dets, heatmap) = detect_with_heatmap(&store, &model, &sample.rgb, depth, a.top_n)?;
    println!("# rank x y theta w h score m_uc");
    for (i, d) in dets.iter().enumerate() {
        let r = &d.rect;
        println!(
            "{i} {:.3} {:.3} {:.5} {:.3} {:.3} {:.5} {:.7}",
            r.x, r.y, r.theta, r.w, r.h, d.location_score, d.m_uc
        );
    }
    let Some(dir) = &a.out else {
        return Ok(());
    };

    let (h, w) = (heatmap.height(), heatmap.width());
    let grid = heatmap.grid().data();
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        let v = grid[y as usize * w + x as usize].clamp(0.0, 1.0);
        Luma([(v * 255.0).round() as u8])
    });
    let pgm = dir.join("heatmap.pgm");
    let file = std::io::BufWriter::new(
        fs::File::create(&pgm).with_context(|| format!("creating {}", pgm.display()))?,
    );
    PnmEncoder::new(file)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(
            img.as_raw(),
            img.width(),
            img.height(),
            ExtendedColorType::L8,
        )?;

    let mut csv = csv::Writer::from_path(dir.join("detections.csv"))?;
    for (rank, d) in dets.iter().enumerate() {
        let r = &d.rect;
        let v = r.vertices();
        csv.serialize(DetectionRow {
            rank,
            x: r.x,
            y: r.y,
            theta: r.theta,
            w: r.w,
            h: r.h,
            score: d.location_score,
            m_uc: d.m_uc,
            x0: v[0][0],
            y0: v[0][1],
            x1: v[1][0],
            y1: v[1][1],
            x2: v[2][0],
            y2: v[2][1],
            x3: v[3][0],
            y3: v[3][1],
        })?;
    }
    csv.flush()?;
    Ok(())
}
