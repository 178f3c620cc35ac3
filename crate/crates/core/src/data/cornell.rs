//! Cornell-format directories: `<id>r.png` colour images, optional `<id>d.png` depth
//! (16-bit, 0.1 mm units), `<id>cpos.txt` positive rectangles.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::geometry::rectfile::{format_rects, read_vertex_file};
use crate::geometry::GraspRect;
use crate::scalar::Scalar;

use super::preprocess::{depth_to_3ch, inpaint_missing, rescale, Preprocess};
use super::synth::{render_split, Scene, SynthConfig, DEPTH_UNITS_PER_METRE};
use super::Sample;

const RGB_SUFFIX: &str = "r.png";
const DEPTH_SUFFIX: &str = "d.png";
const RECT_SUFFIX: &str = "cpos.txt";
pub const MANIFEST_JSON: &str = "manifest.json";
pub const MANIFEST_CSV: &str = "manifest.csv";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Applied to non-square images (raw sensor frames).
    pub preprocess: Preprocess,
    /// Final square size; images and annotations are rescaled to it.
    pub size: Option<usize>,
    /// Skip depth files even if present.
    pub rgb_only: bool,
    /// Domain tag for loaded samples.
    pub domain: String,
}

pub fn read_rgb<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros(&[3, h, w]);
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            t.set3(c, y as usize, x as usize, T::lit(p[c] as f64 / 255.0));
        }
    }
    Ok(t)
}

/// Raw depth in metres; zero marks a missing reading.
pub fn read_depth<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let img = img.to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img
        .pixels()
        .map(|p| T::lit(p[0] as f64 / DEPTH_UNITS_PER_METRE))
        .collect();
    Tensor::new(&[1, h, w], data)
}

pub fn write_rgb<T: Scalar>(t: &Tensor<T>, path: &Path) -> Result<()> {
    let (h, w) = (t.shape()[1], t.shape()[2]);
    let img = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        Rgb([0, 1, 2].map(|c| {
            (t.at3(c, y as usize, x as usize).as_f64().clamp(0.0, 1.0) * 255.0).round() as u8
        }))
    });
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_depth<T: Scalar>(t: &Tensor<T>, path: &Path) -> Result<()> {
    let (h, w) = (t.shape()[1], t.shape()[2]);
    let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let d = t.at3(0, y as usize, x as usize).as_f64() * DEPTH_UNITS_PER_METRE;
        Luma([d.round().clamp(0.0, u16::MAX as f64) as u16])
    });
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Ids of every `<id>r.png` in `dir`, sorted.
pub fn list_ids(dir: &Path) -> Result<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Some(name) = entry.file_name().to_str() {
            if let Some(id) = name.strip_suffix(RGB_SUFFIX) {
                if !id.is_empty() {
                    ids.push(id.to_string());
                }
            }
        }
    }
    ids.sort();
    Ok(ids)
}

/// Parses a rectangle file, skipping rectangles that are not near-parallelograms.
pub fn read_annotations<T: Scalar>(path: &Path) -> Result<Vec<GraspRect<T>>> {
    let groups = read_vertex_file::<T>(path)?;
    let mut out = Vec::with_capacity(groups.len());
    for (i, g) in groups.iter().enumerate() {
        match GraspRect::from_vertices(g) {
            Ok(r) => out.push(r),
            Err(e) => warn!("{}: rectangle {} skipped: {e}", path.display(), i + 1),
        }
    }
    Ok(out)
}

/// Loads one sample by id from a Cornell-format directory.
pub fn load_sample<T: Scalar>(dir: &Path, id: &str, opts: &LoadOptions) -> Result<Sample<T>> {
    let rect_path = dir.join(format!("{id}{RECT_SUFFIX}"));
    let depth_path = dir.join(format!("{id}{DEPTH_SUFFIX}"));
    load_files(
        id,
        &dir.join(format!("{id}{RGB_SUFFIX}")),
        Some(depth_path.as_path()).filter(|p| p.exists()),
        Some(rect_path.as_path()).filter(|p| p.exists()),
        opts,
    )
}

/// Loads a sample from explicit file paths, with the same preprocessing as
/// [`load_sample`].
pub fn load_files<T: Scalar>(
    id: &str,
    rgb_path: &Path,
    depth_path: Option<&Path>,
    rect_path: Option<&Path>,
    opts: &LoadOptions,
) -> Result<Sample<T>> {
    let mut rgb = read_rgb::<T>(rgb_path)?;
    let mut anns = if let Some(rect_path) = rect_path {
        let a = read_annotations::<T>(rect_path)?;
        if a.is_empty() {
            warn!(
                "{}: no valid rectangles, sample treated as unlabelled",
                rect_path.display()
            );
        }
        a
    } else {
        Vec::new()
    };
    let mut depth = if let Some(depth_path) = depth_path.filter(|_| !opts.rgb_only) {
        let mut d = read_depth::<T>(depth_path)?;
        let (h, w) = (d.shape()[1], d.shape()[2]);
        inpaint_missing(d.data_mut(), h, w)?;
        if [h, w] != rgb.shape()[1..] {
            return Err(Error::Data(format!(
                "{}: depth {w}×{h} does not match colour image",
                depth_path.display()
            )));
        }
        Some(d)
    } else {
        None
    };
    if rgb.shape()[1] != rgb.shape()[2] {
        let (r, a) = opts.preprocess.apply(&rgb, &anns)?;
        if let Some(d) = &depth {
            depth = Some(opts.preprocess.apply(d, &[])?.0);
        }
        rgb = r;
        anns = a;
    }
    if let Some(size) = opts.size {
        let (r, a) = rescale(&rgb, &anns, size);
        if let Some(d) = &depth {
            depth = Some(rescale(d, &[], size).0);
        }
        rgb = r;
        anns = a;
    }
    let depth = match depth {
        Some(d) => Some(depth_to_3ch(&d)?),
        None => None,
    };
    let domain = if opts.domain.is_empty() {
        "cornell"
    } else {
        &opts.domain
    };
    Sample::new(id, rgb, depth, anns, domain)
}

/// One sample per colour image, sorted by id.
pub fn load_cornell_dir<T: Scalar>(dir: &Path, opts: &LoadOptions) -> Result<Vec<Sample<T>>> {
    list_ids(dir)?
        .iter()
        .map(|id| load_sample(dir, id, opts))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitLists {
    pub labelled: Vec<String>,
    pub unlabelled: Vec<String>,
    pub eval: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub config: SynthConfig,
    pub splits: SplitLists,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    id: String,
    path: String,
    labelled: bool,
    domain: String,
}

fn write_scene(dir: &Path, id: &str, scene: &Scene, labelled: bool) -> Result<()> {
    write_rgb(&scene.rgb, &dir.join(format!("{id}{RGB_SUFFIX}")))?;
    if let Some(d) = &scene.depth {
        write_depth(d, &dir.join(format!("{id}{DEPTH_SUFFIX}")))?;
    }
    if labelled {
        let path = dir.join(format!("{id}{RECT_SUFFIX}"));
        fs::write(&path, format_rects(&scene.grasps)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Renders and writes a synthetic dataset with its JSON and CSV manifests.
pub fn write_synth_dir(
    cfg: &SynthConfig,
    n_labelled: usize,
    n_unlabelled: usize,
    dir: &Path,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut splits = SplitLists {
        labelled: Vec::new(),
        unlabelled: Vec::new(),
        eval: Vec::new(),
    };
    let csv_path = dir.join(MANIFEST_CSV);
    let mut csv = csv::Writer::from_path(&csv_path)?;
    for (tag, n, labelled) in [
        ("l", n_labelled, true),
        ("u", n_unlabelled, false),
        ("e", cfg.n_eval, true),
    ] {
        for (id, scene) in render_split(cfg, tag, n)? {
            write_scene(dir, &id, &scene, labelled)?;
            csv.serialize(ManifestRow {
                path: format!("{id}{RGB_SUFFIX}"),
                id: id.clone(),
                labelled,
                domain: cfg.domain.clone(),
            })?;
            match tag {
                "l" => splits.labelled.push(id),
                "u" => splits.unlabelled.push(id),
                _ => splits.eval.push(id),
            }
        }
    }
    csv.flush().map_err(|e| Error::io(&csv_path, e))?;
    let manifest = DatasetManifest {
        seed: cfg.seed,
        config: cfg.clone(),
        splits,
    };
    let json_path = dir.join(MANIFEST_JSON);
    fs::write(&json_path, serde_json::to_string_pretty(&manifest)?)
        .map_err(|e| Error::io(&json_path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_JSON);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Dataset split loaded from a directory.
#[derive(Clone, Debug)]
pub struct LoadedSplits<T> {
    pub labelled: Vec<Sample<T>>,
    pub unlabelled: Vec<Sample<T>>,
    pub eval: Vec<Sample<T>>,
}

/// Loads a directory written by [`write_synth_dir`] using its manifest, or any
/// Cornell-format directory (everything labelled goes to `labelled`, the rest to
/// `unlabelled`, `eval` stays empty).
pub fn load_splits<T: Scalar>(dir: &Path, opts: &LoadOptions) -> Result<LoadedSplits<T>> {
    if dir.join(MANIFEST_JSON).exists() {
        let m = read_manifest(dir)?;
        let opts = LoadOptions {
            domain: if opts.domain.is_empty() {
                m.config.domain.clone()
            } else {
                opts.domain.clone()
            },
            ..opts.clone()
        };
        let load = |ids: &[String]| -> Result<Vec<Sample<T>>> {
            let mut v: Vec<_> = ids
                .iter()
                .map(|id| load_sample(dir, id, &opts))
                .collect::<Result<_>>()?;
            v.sort_by(|a, b| a.id.cmp(&b.id));
            Ok(v)
        };
        return Ok(LoadedSplits {
            labelled: load(&m.splits.labelled)?,
            unlabelled: load(&m.splits.unlabelled)?,
            eval: load(&m.splits.eval)?,
        });
    }
    let all = load_cornell_dir::<T>(dir, opts)?;
    let (labelled, unlabelled) = all.into_iter().partition(|s| s.labelled);
    Ok(LoadedSplits {
        labelled,
        unlabelled,
        eval: Vec::new(),
    })
}

/// Path of the colour image for `id` in `dir`.
pub fn rgb_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}{RGB_SUFFIX}"))
}
