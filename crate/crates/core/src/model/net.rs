//! Forward passes: two-branch fused encoder, heatmap decoder, per-stage pose heads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::autodiff::{he_normal, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const BACKBONE: &str = "backbone.";
pub const LOCNET: &str = "loc.";
pub const POSENET: &str = "pose.";
pub const DEPTH_BRANCH: &str = "backbone.depth.";

/// Fused features of stages 1..=4, recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct Pyramid(pub [Var; 4]);

impl Pyramid {
    pub fn tensors<T: Scalar>(&self, tape: &Tape<T>) -> [Tensor<T>; 4] {
        self.0.map(|v| tape.value(v).clone())
    }

    /// Re-enters precomputed features as constants.
    pub fn constants<T: Scalar>(tape: &mut Tape<T>, maps: &[Tensor<T>; 4]) -> Self {
        Pyramid([0, 1, 2, 3].map(|k| tape.constant(maps[k].clone())))
    }
}

/// Per-location pose predictions on a tape; every matrix is `N×3` of
/// normalised `(θ̂, ŵ, ĥ)`.
#[derive(Clone, Copy, Debug)]
pub struct PoseVars {
    pub stages: [Var; 4],
    pub mean: Var,
}

fn rng_for(seed: u64, group: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(group);
    rng
}

fn conv_param<T: Scalar>(
    store: &mut ParamStore<T>,
    name: &str,
    c_out: usize,
    c_in: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) {
    store.insert(
        &format!("{name}.w"),
        he_normal(&[c_out, c_in, k, k], c_in * k * k, rng),
    );
    store.insert(&format!("{name}.b"), Tensor::zeros(&[c_out]));
}

fn branch_params<T: Scalar>(
    store: &mut ParamStore<T>,
    cfg: &ModelConfig,
    branch: &str,
    rng: &mut ChaCha8Rng,
) {
    let mut c_in = 3;
    for (k, &c) in cfg.stage_channels.iter().enumerate() {
        conv_param(
            store,
            &format!("backbone.{branch}.s{}.conv1", k + 1),
            c,
            c_in,
            3,
            rng,
        );
        conv_param(
            store,
            &format!("backbone.{branch}.s{}.conv2", k + 1),
            c,
            c,
            3,
            rng,
        );
        c_in = c;
    }
}

/// Fresh parameters. Each group draws from its own stream so that toggling the depth
/// branch leaves the others unchanged.
pub fn init_params<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    branch_params(&mut store, cfg, "rgb", &mut rng_for(seed, 1));
    if cfg.use_depth_branch {
        branch_params(&mut store, cfg, "depth", &mut rng_for(seed, 2));
    }
    init_locnet(&mut store, cfg, seed);
    let mut rng = rng_for(seed, 4);
    let crop_area = cfg.crop_cells * cfg.crop_cells;
    for (k, &c) in cfg.stage_channels.iter().enumerate() {
        let fan = c * crop_area;
        let base = format!("pose.head{}", k + 1);
        store.insert(
            &format!("{base}.fc1.w"),
            he_normal(&[fan, cfg.pose_hidden], fan, &mut rng),
        );
        store.insert(&format!("{base}.fc1.b"), Tensor::zeros(&[cfg.pose_hidden]));
        let w2: Tensor<T> = he_normal(&[cfg.pose_hidden, 3], cfg.pose_hidden, &mut rng);
        store.insert(&format!("{base}.fc2.w"), w2.map(|v| v * T::lit(0.1)));
        store.insert(&format!("{base}.fc2.b"), Tensor::zeros(&[3]));
    }
    Ok(store)
}

/// (Re)initialises the heatmap decoder parameters in place.
pub fn init_locnet<T: Scalar>(store: &mut ParamStore<T>, cfg: &ModelConfig, seed: u64) {
    let mut rng = rng_for(seed, 3);
    let d = cfg.decoder_channels;
    let [c1, c2, c3, c4] = cfg.stage_channels;
    conv_param(store, "loc.top", d, c4, 1, &mut rng);
    for (k, c) in [(3, c3), (2, c2), (1, c1)] {
        conv_param(store, &format!("loc.lat{k}"), d, c, 1, &mut rng);
        conv_param(store, &format!("loc.dec{k}"), d, d, 3, &mut rng);
    }
    conv_param(store, "loc.out", 1, d, 3, &mut rng);
    // Start from a low heatmap: positives are a small fraction of cells.
    store.insert("loc.out.b", Tensor::full(&[1], T::lit(-2.0)));
}

fn conv<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    name: &str,
    x: Var,
    stride: usize,
) -> Result<Var> {
    let w = tape.param_named(store, &format!("{name}.w"))?;
    let b = tape.param_named(store, &format!("{name}.b"))?;
    tape.conv2d(x, w, Some(b), stride)
}

fn check_image<T: Scalar>(t: &Tensor<T>, cfg: &ModelConfig, what: &str) -> Result<()> {
    let s = cfg.input_size;
    if t.shape() != [3, s, s] {
        return Err(Error::Dimension(format!(
            "{what} must be 3×{s}×{s}, got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

fn run_branch<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    branch: &str,
    input: Var,
) -> Result<[Var; 4]> {
    let mut x = input;
    let mut out = Vec::with_capacity(4);
    for k in 1..=4 {
        let a = conv(tape, store, &format!("backbone.{branch}.s{k}.conv1"), x, 2)?;
        let a = tape.relu(a)?;
        let b = conv(tape, store, &format!("backbone.{branch}.s{k}.conv2"), a, 1)?;
        x = tape.relu(b)?;
        out.push(x);
    }
    Ok([out[0], out[1], out[2], out[3]])
}

/// Encodes an RGB(-D) observation into fused pyramid features.
pub fn encode<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    cfg: &ModelConfig,
    rgb: &Tensor<T>,
    depth: Option<&Tensor<T>>,
) -> Result<Pyramid> {
    check_image(rgb, cfg, "rgb")?;
    if depth.is_some() != cfg.use_depth_branch {
        return Err(Error::Dimension(format!(
            "depth input {} but the model {} a depth branch",
            if depth.is_some() { "given" } else { "missing" },
            if cfg.use_depth_branch {
                "has"
            } else {
                "has no"
            }
        )));
    }
    let x = tape.constant(rgb.clone());
    let rgb_feats = run_branch(tape, store, "rgb", x)?;
    let Some(depth) = depth else {
        return Ok(Pyramid(rgb_feats));
    };
    check_image(depth, cfg, "depth")?;
    let d = tape.constant(depth.clone());
    let depth_feats = run_branch(tape, store, "depth", d)?;
    let mut fused = rgb_feats;
    for k in 0..4 {
        fused[k] = tape.add(rgb_feats[k], depth_feats[k])?;
    }
    Ok(Pyramid(fused))
}

/// Heatmap decoder; returns a `1×(S/2)×(S/2)` map in `(0, 1)`.
pub fn locnet_forward<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    feats: &Pyramid,
) -> Result<Var> {
    let top = conv(tape, store, "loc.top", feats.0[3], 1)?;
    let mut d = tape.relu(top)?;
    for k in [3, 2, 1] {
        let up = tape.upsample2x(d)?;
        let lat = conv(tape, store, &format!("loc.lat{k}"), feats.0[k - 1], 1)?;
        let merged = tape.add(up, lat)?;
        let c = conv(tape, store, &format!("loc.dec{k}"), merged, 1)?;
        d = tape.relu(c)?;
    }
    let logits = conv(tape, store, "loc.out", d, 1)?;
    tape.sigmoid(logits)
}

/// Top-left cell of the crop window for input coordinate `coord` at a stage with
/// `cells` cells of `scale` pixels each; the window is clamped inside the map.
pub fn crop_origin(coord: f64, scale: usize, cells: usize, window: usize) -> usize {
    let centre = ((coord / scale as f64).floor().max(0.0) as usize).min(cells - 1);
    centre.saturating_sub(window / 2).min(cells - window)
}

/// Pose heads at each location: crop, flatten, two-layer head per stage, squash
/// `θ̂` with tanh and `ŵ, ĥ` with sigmoid, then average the stages.
pub fn posenet_forward<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    cfg: &ModelConfig,
    feats: &Pyramid,
    locs: &[(T, T)],
) -> Result<PoseVars> {
    if locs.is_empty() {
        return Err(Error::Argument(
            "posenet_forward needs at least one location".into(),
        ));
    }
    let size = T::lit(cfg.input_size as f64);
    for &(x, y) in locs {
        if !(x >= T::zero() && x < size && y >= T::zero() && y < size) {
            return Err(Error::Argument(format!(
                "location ({x}, {y}) outside the {0}×{0} image",
                cfg.input_size
            )));
        }
    }
    let n = locs.len();
    let theta_mask = Tensor::from_fn(&[n, 3], |i| if i % 3 == 0 { T::one() } else { T::zero() });
    let size_mask = theta_mask.map(|v| T::one() - v);
    let mut stages = Vec::with_capacity(4);
    for k in 1..=4 {
        let fmap = feats.0[k - 1];
        let cells = cfg.stage_size(k);
        let scale = 1usize << k;
        let mut crops = Vec::with_capacity(n);
        for &(x, y) in locs {
            let left = crop_origin(x.as_f64(), scale, cells, cfg.crop_cells);
            let top = crop_origin(y.as_f64(), scale, cells, cfg.crop_cells);
            crops.push(tape.crop(fmap, top, left, cfg.crop_cells)?);
        }
        let flat = tape.stack_rows(&crops)?;
        let base = format!("pose.head{k}");
        let w1 = tape.param_named(store, &format!("{base}.fc1.w"))?;
        let b1 = tape.param_named(store, &format!("{base}.fc1.b"))?;
        let w2 = tape.param_named(store, &format!("{base}.fc2.w"))?;
        let b2 = tape.param_named(store, &format!("{base}.fc2.b"))?;
        let hidden = tape.matmul(flat, w1)?;
        let hidden = tape.add_row_bias(hidden, b1)?;
        let hidden = tape.relu(hidden)?;
        let raw = tape.matmul(hidden, w2)?;
        let raw = tape.add_row_bias(raw, b2)?;
        let th = tape.tanh(raw)?;
        let sg = tape.sigmoid(raw)?;
        let th = tape.mul_const(th, &theta_mask)?;
        let sg = tape.mul_const(sg, &size_mask)?;
        stages.push(tape.add(th, sg)?);
    }
    let s01 = tape.add(stages[0], stages[1])?;
    let s23 = tape.add(stages[2], stages[3])?;
    let sum = tape.add(s01, s23)?;
    let mean = tape.scale(sum, T::lit(0.25))?;
    Ok(PoseVars {
        stages: [stages[0], stages[1], stages[2], stages[3]],
        mean,
    })
}

/// Zero-valued depth input, for observations without a depth channel fed to a model
/// that has a depth branch.
pub fn zero_depth<T: Scalar>(cfg: &ModelConfig) -> Tensor<T> {
    Tensor::zeros(&[3, cfg.input_size, cfg.input_size])
}
