//! Seeded grasp scenes with analytically known grasps: bars, ellipses and L-shapes on
//! a table, optionally with a depth map.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, GraspRect};
use crate::scalar::Scalar;

use super::preprocess::depth_to_3ch;
use super::Sample;

/// Depth maps are stored in units of 0.1 mm, like 16-bit sensor output.
pub const DEPTH_UNITS_PER_METRE: f64 = 10_000.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Bar,
    Ellipse,
    LShape,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Background {
    /// Flat colour with a faint illumination gradient.
    Plain,
    /// Sinusoidal stripes at a random orientation.
    Stripes {
        period: f64,
        contrast: f64,
    },
    Checker {
        cell: f64,
        contrast: f64,
    },
    /// Smoothed value noise.
    Blotches {
        scale: f64,
        contrast: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub image_size: usize,
    pub shapes: Vec<ShapeKind>,
    /// Inclusive range.
    pub objects_per_image: (usize, usize),
    pub backgrounds: Vec<Background>,
    pub background_palette: Vec<[f64; 3]>,
    pub object_palette: Vec<[f64; 3]>,
    pub brightness: (f64, f64),
    pub noise_sigma: (f64, f64),
    pub emit_depth: bool,
    /// Grasp orientations are drawn from `[-max_theta, max_theta]`.
    pub max_theta: f64,
    /// Small ungraspable blobs per image, inclusive range.
    pub clutter: (usize, usize),
    pub max_grasps: usize,
    pub n_eval: usize,
    pub domain: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::source(0)
    }
}

impl SynthConfig {
    /// RGB-D scenes, plain table, warm object colours.
    pub fn source(seed: u64) -> Self {
        SynthConfig {
            seed,
            image_size: 64,
            shapes: vec![ShapeKind::Bar, ShapeKind::Ellipse, ShapeKind::LShape],
            objects_per_image: (1, 2),
            backgrounds: vec![Background::Plain],
            background_palette: vec![[0.55, 0.55, 0.52], [0.62, 0.60, 0.56], [0.48, 0.50, 0.50]],
            object_palette: vec![
                [0.85, 0.25, 0.20],
                [0.90, 0.60, 0.15],
                [0.20, 0.20, 0.22],
                [0.95, 0.90, 0.80],
                [0.60, 0.35, 0.20],
            ],
            brightness: (0.9, 1.1),
            noise_sigma: (0.0, 0.01),
            emit_depth: true,
            max_theta: std::f64::consts::FRAC_PI_3,
            clutter: (0, 0),
            max_grasps: 5,
            n_eval: 54,
            domain: "source".into(),
        }
    }

    /// The shifted domain: textured backgrounds, cool palette, RGB only.
    pub fn target(seed: u64) -> Self {
        SynthConfig {
            backgrounds: vec![
                Background::Stripes {
                    period: 9.0,
                    contrast: 0.18,
                },
                Background::Checker {
                    cell: 7.0,
                    contrast: 0.14,
                },
                Background::Blotches {
                    scale: 8.0,
                    contrast: 0.25,
                },
            ],
            background_palette: vec![[0.35, 0.42, 0.30], [0.62, 0.52, 0.40], [0.30, 0.35, 0.50]],
            object_palette: vec![
                [0.15, 0.45, 0.85],
                [0.20, 0.75, 0.70],
                [0.70, 0.30, 0.80],
                [0.90, 0.90, 0.30],
                [0.95, 0.95, 0.95],
            ],
            brightness: (0.75, 1.2),
            noise_sigma: (0.0, 0.02),
            emit_depth: false,
            clutter: (0, 2),
            domain: "target".into(),
            ..Self::source(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.image_size < 32 {
            return bad("image_size must be at least 32");
        }
        if self.shapes.is_empty() || self.backgrounds.is_empty() {
            return bad("shapes and backgrounds must be non-empty");
        }
        if self.background_palette.is_empty() || self.object_palette.is_empty() {
            return bad("palettes must be non-empty");
        }
        let (lo, hi) = self.objects_per_image;
        if lo == 0 || hi < lo || hi > 3 {
            return bad("objects_per_image must satisfy 1 <= min <= max <= 3");
        }
        if self.clutter.1 < self.clutter.0 {
            return bad("clutter range is inverted");
        }
        if self.brightness.1 < self.brightness.0 || self.brightness.0 <= 0.0 {
            return bad("brightness range must be positive and ordered");
        }
        if self.noise_sigma.1 < self.noise_sigma.0 || self.noise_sigma.0 < 0.0 {
            return bad("noise range must be non-negative and ordered");
        }
        if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&self.max_theta) {
            return bad("max_theta must lie in [0, π/2]");
        }
        if self.max_grasps == 0 {
            return bad("max_grasps must be positive");
        }
        Ok(())
    }
}

/// The three generated splits, each sorted by id.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset<T> {
    pub labelled: Vec<Sample<T>>,
    pub unlabelled: Vec<Sample<T>>,
    pub eval: Vec<Sample<T>>,
}

/// A rendered scene before depth encoding; depth is raw metres, quantised to sensor units.
#[derive(Clone, Debug)]
pub struct Scene {
    pub rgb: Tensor<f64>,
    pub depth: Option<Tensor<f64>>,
    pub grasps: Vec<GraspRect<f64>>,
}

#[derive(Clone, Copy, Debug)]
enum Split {
    Labelled = 0,
    Unlabelled = 1,
    Eval = 2,
}

impl Split {
    fn tag(self) -> &'static str {
        match self {
            Split::Labelled => "l",
            Split::Unlabelled => "u",
            Split::Eval => "e",
        }
    }
}

/// Grasps on a bar: centres spread along the axis, oriented along the axis normal,
/// spanning the bar thickness `b` along `theta` with clearance.
pub fn bar_grasps(
    cx: f64,
    cy: f64,
    normal: f64,
    length: f64,
    b: f64,
    n: usize,
) -> Vec<GraspRect<f64>> {
    let (ax, ay) = (normal.sin(), -normal.cos());
    let half = (length / 2.0 - b).max(0.0);
    (0..n)
        .map(|i| {
            let t = if n == 1 {
                0.0
            } else {
                -half + 2.0 * half * i as f64 / (n - 1) as f64
            };
            GraspRect::new(cx + t * ax, cy + t * ay, normal, 1.4 * b + 3.0, 1.2 * b)
                .expect("positive bar size")
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
struct Placed {
    kind: ShapeKind,
    cx: f64,
    cy: f64,
    /// Orientation of the grasp direction (normal to the main axis).
    normal: f64,
    length: f64,
    thick: f64,
    /// Second arm length for L-shapes; arm side sign.
    arm: f64,
    side: f64,
    colour: [f64; 3],
    height: f64,
}

impl Placed {
    fn radius(&self) -> f64 {
        match self.kind {
            ShapeKind::Bar | ShapeKind::Ellipse => self.length / 2.0,
            ShapeKind::LShape => (self.length / 2.0).hypot(self.arm),
        }
    }

    /// Local coordinates: `u` along the main axis, `v` along the normal.
    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (ax, ay) = (self.normal.sin(), -self.normal.cos());
        let (nx, ny) = (self.normal.cos(), self.normal.sin());
        let (dx, dy) = (x - self.cx, y - self.cy);
        (dx * ax + dy * ay, dx * nx + dy * ny)
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (u, v) = self.local(x, y);
        let (l2, t2) = (self.length / 2.0, self.thick / 2.0);
        match self.kind {
            ShapeKind::Bar => u.abs() <= l2 && v.abs() <= t2,
            ShapeKind::Ellipse => (u / l2).powi(2) + (v / t2).powi(2) <= 1.0,
            ShapeKind::LShape => {
                let long = u.abs() <= l2 && v.abs() <= t2;
                // Short arm hangs off the +u end, perpendicular to the long arm.
                let vv = v * self.side;
                let short = (l2 - self.thick..=l2).contains(&u) && (-t2..=self.arm).contains(&vv);
                long || short
            }
        }
    }

    fn grasps(&self, n: usize) -> Vec<GraspRect<f64>> {
        match self.kind {
            ShapeKind::Bar => bar_grasps(self.cx, self.cy, self.normal, self.length, self.thick, n),
            ShapeKind::Ellipse => {
                // Ellipse thickness shrinks away from the centre; stay in the middle half.
                let (ax, ay) = (self.normal.sin(), -self.normal.cos());
                let half = 0.25 * self.length / 2.0;
                (0..n)
                    .map(|i| {
                        let t = if n == 1 {
                            0.0
                        } else {
                            -half + 2.0 * half * i as f64 / (n - 1) as f64
                        };
                        GraspRect::new(
                            self.cx + t * ax,
                            self.cy + t * ay,
                            self.normal,
                            1.4 * self.thick + 3.0,
                            1.2 * self.thick,
                        )
                        .expect("positive ellipse size")
                    })
                    .collect()
            }
            ShapeKind::LShape => {
                // Long arm only, away from the corner at +u.
                let (ax, ay) = (self.normal.sin(), -self.normal.cos());
                let lo = -self.length / 2.0 + self.thick;
                let hi = self.length / 2.0 - 2.0 * self.thick;
                (0..n)
                    .map(|i| {
                        let t = if n == 1 {
                            (lo + hi) / 2.0
                        } else {
                            lo + (hi - lo) * i as f64 / (n - 1) as f64
                        };
                        GraspRect::new(
                            self.cx + t * ax,
                            self.cy + t * ay,
                            self.normal,
                            1.4 * self.thick + 3.0,
                            1.2 * self.thick,
                        )
                        .expect("positive arm size")
                    })
                    .collect()
            }
        }
    }
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> &'a T {
    &items[rng.random_range(0..items.len())]
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn place_objects(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Placed> {
    let s = cfg.image_size as f64;
    let n = rng.random_range(cfg.objects_per_image.0..=cfg.objects_per_image.1);
    let mut placed: Vec<Placed> = Vec::new();
    for _ in 0..n {
        let kind = *pick(rng, &cfg.shapes);
        let (length, thick) = match kind {
            ShapeKind::Bar => (
                uniform(rng, (0.38 * s, 0.6 * s)),
                uniform(rng, (0.10 * s, 0.15 * s)),
            ),
            ShapeKind::Ellipse => (
                uniform(rng, (0.38 * s, 0.55 * s)),
                uniform(rng, (0.14 * s, 0.2 * s)),
            ),
            ShapeKind::LShape => (
                uniform(rng, (0.45 * s, 0.6 * s)),
                uniform(rng, (0.10 * s, 0.14 * s)),
            ),
        };
        let base = [0.0; 3];
        let colour = pick(rng, &cfg.object_palette);
        let jitter =
            |rng: &mut ChaCha8Rng, c: f64| (c + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0);
        let colour = [
            jitter(rng, colour[0]),
            jitter(rng, colour[1]),
            jitter(rng, colour[2]),
        ];
        let mut p = Placed {
            kind,
            cx: 0.0,
            cy: 0.0,
            normal: uniform(rng, (-cfg.max_theta, cfg.max_theta)),
            length,
            thick,
            arm: uniform(rng, (0.18 * s, 0.26 * s)),
            side: if rng.random_bool(0.5) { 1.0 } else { -1.0 },
            colour: if colour == base { [0.1; 3] } else { colour },
            height: uniform(rng, (0.02, 0.05)),
        };
        // Rejection sampling for a position inside the frame and apart from earlier objects.
        let r = p.radius();
        for attempt in 0..50 {
            let margin = r + 2.0;
            p.cx = uniform(rng, (margin.min(s / 2.0), (s - margin).max(s / 2.0)));
            p.cy = uniform(rng, (margin.min(s / 2.0), (s - margin).max(s / 2.0)));
            let clear = placed
                .iter()
                .all(|q| (q.cx - p.cx).hypot(q.cy - p.cy) > q.radius() + r + 2.0);
            if clear || attempt == 49 {
                break;
            }
        }
        let clear = placed
            .iter()
            .all(|q| (q.cx - p.cx).hypot(q.cy - p.cy) > q.radius() + r + 2.0);
        if clear {
            placed.push(p);
        }
    }
    placed
}

fn background(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> impl Fn(f64, f64) -> [f64; 3] {
    let base = *pick(rng, &cfg.background_palette);
    let kind = *pick(rng, &cfg.backgrounds);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    let (gx, gy) = (rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
    let s = cfg.image_size as f64;
    // Blotches: coarse random lattice, bilinearly interpolated.
    let lattice: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
    move |x: f64, y: f64| {
        let shade = 1.0 + gx * (x / s - 0.5) + gy * (y / s - 0.5);
        let m = match kind {
            Background::Plain => 0.0,
            Background::Stripes { period, contrast } => {
                let t = x * angle.cos() + y * angle.sin();
                contrast * (std::f64::consts::TAU * t / period + phase).sin()
            }
            Background::Checker { cell, contrast } => {
                let i = (x / cell + phase).floor() as i64 + (y / cell).floor() as i64;
                if i.rem_euclid(2) == 0 {
                    contrast
                } else {
                    -contrast
                }
            }
            Background::Blotches { scale, contrast } => {
                let (fx, fy) = (x / scale, y / scale);
                let (ix, iy) = (fx.floor(), fy.floor());
                let (tx, ty) = (fx - ix, fy - iy);
                let at = |i: f64, j: f64| {
                    lattice[((i as i64).rem_euclid(8) * 8 + (j as i64).rem_euclid(8)) as usize]
                };
                let top = at(ix, iy) * (1.0 - tx) + at(ix + 1.0, iy) * tx;
                let bot = at(ix, iy + 1.0) * (1.0 - tx) + at(ix + 1.0, iy + 1.0) * tx;
                contrast * (top * (1.0 - ty) + bot * ty)
            }
        };
        [0, 1, 2].map(|c| (base[c] * shade + m * if c == 1 { 0.8 } else { 1.0 }).clamp(0.0, 1.0))
    }
}

/// Renders one scene with 2×2 supersampled coverage.
pub fn render_scene(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Scene {
    let n = cfg.image_size;
    let objects = place_objects(cfg, rng);
    let n_clutter = rng.random_range(cfg.clutter.0..=cfg.clutter.1);
    let clutter: Vec<(f64, f64, f64, [f64; 3])> = (0..n_clutter)
        .map(|_| {
            let c = *pick(rng, &cfg.object_palette);
            (
                rng.random_range(3.0..n as f64 - 3.0),
                rng.random_range(3.0..n as f64 - 3.0),
                rng.random_range(1.5..3.0),
                c,
            )
        })
        .collect();
    let bg = background(cfg, rng);
    let table = 0.7 + rng.random_range(-0.05..0.05);
    let (tilt_x, tilt_y) = (rng.random_range(-2e-4..2e-4), rng.random_range(-2e-4..2e-4));
    let gain = uniform(rng, cfg.brightness);
    let sigma = uniform(rng, cfg.noise_sigma);
    let noise = Normal::new(0.0, sigma.max(1e-12)).expect("valid sigma");
    let depth_noise = Normal::new(0.0, 5e-4).expect("valid sigma");

    let mut rgb = Tensor::zeros(&[3, n, n]);
    let mut depth = Tensor::zeros(&[1, n, n]);
    let offsets = [0.25, 0.75];
    for y in 0..n {
        for x in 0..n {
            let mut colour = [0.0; 3];
            let mut lift = 0.0;
            for oy in offsets {
                for ox in offsets {
                    let (px, py) = (x as f64 + ox, y as f64 + oy);
                    let mut c = bg(px, py);
                    let mut h = 0.0;
                    for &(bx, by, r, cc) in &clutter {
                        if (px - bx).hypot(py - by) <= r {
                            c = cc;
                            h = 0.01;
                        }
                    }
                    for o in &objects {
                        if o.contains(px, py) {
                            let (u, _) = o.local(px, py);
                            let shade = 0.9 + 0.1 * (u / o.length).clamp(-0.5, 0.5);
                            c = o.colour.map(|v| v * shade);
                            h = o.height;
                        }
                    }
                    for k in 0..3 {
                        colour[k] += c[k] * 0.25;
                    }
                    lift += h * 0.25;
                }
            }
            for (k, v) in colour.iter().enumerate() {
                let n = if sigma > 0.0 { noise.sample(rng) } else { 0.0 };
                let v = (v * gain + n).clamp(0.0, 1.0);
                rgb.set3(k, y, x, (v * 255.0).round() / 255.0);
            }
            let d = table + tilt_x * x as f64 + tilt_y * y as f64 - lift + depth_noise.sample(rng);
            // A few dropped readings, as on real sensors.
            let d = if rng.random_bool(0.003) { 0.0 } else { d };
            depth.set3(
                0,
                y,
                x,
                (d * DEPTH_UNITS_PER_METRE).round() / DEPTH_UNITS_PER_METRE,
            );
        }
    }

    let mut grasps = Vec::new();
    let per = if objects.is_empty() {
        0
    } else {
        cfg.max_grasps / objects.len()
    };
    let extra = if objects.is_empty() {
        0
    } else {
        cfg.max_grasps % objects.len()
    };
    for (i, o) in objects.iter().enumerate() {
        let want = per + usize::from(i < extra);
        let cap = match o.kind {
            ShapeKind::Bar => 5,
            ShapeKind::Ellipse => 3,
            ShapeKind::LShape => 3,
        };
        grasps.extend(o.grasps(want.min(cap).max(1)));
    }
    grasps.truncate(cfg.max_grasps);
    let s = n as f64;
    grasps.retain(|g| (0.0..s).contains(&g.x) && (0.0..s).contains(&g.y));
    for g in &mut grasps {
        g.theta = normalize_angle(g.theta);
    }

    Scene {
        rgb,
        depth: cfg.emit_depth.then_some(depth),
        grasps,
    }
}

fn sample_rng(cfg: &SynthConfig, split: Split, index: usize) -> ChaCha8Rng {
    // FNV-1a of the domain tag, so domains sharing a seed still get different scenes.
    let tag = cfg.domain.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
    });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ tag);
    rng.set_stream(((split as u64) << 40) | index as u64);
    rng
}

/// Converts a rendered scene to a sample at precision `T`.
pub fn scene_to_sample<T: Scalar>(
    scene: &Scene,
    id: String,
    keep_labels: bool,
    domain: &str,
) -> Result<Sample<T>> {
    let depth = match &scene.depth {
        Some(d) => Some(depth_to_3ch(&d.cast::<T>())?),
        None => None,
    };
    let anns = if keep_labels {
        scene.grasps.iter().map(|g| g.cast()).collect()
    } else {
        Vec::new()
    };
    Sample::new(id, scene.rgb.cast(), depth, anns, domain)
}

pub fn sample_id(domain: &str, split: &str, index: usize) -> String {
    format!("{domain}_{split}_{index:05}")
}

fn generate_split<T: Scalar>(cfg: &SynthConfig, split: Split, n: usize) -> Result<Vec<Sample<T>>> {
    (0..n)
        .map(|i| {
            let mut rng = sample_rng(cfg, split, i);
            let scene = render_scene(cfg, &mut rng);
            let labelled = !matches!(split, Split::Unlabelled);
            scene_to_sample(
                &scene,
                sample_id(&cfg.domain, split.tag(), i),
                labelled,
                &cfg.domain,
            )
        })
        .collect()
}

/// Generates labelled, unlabelled and evaluation splits; each sample has its own RNG
/// stream, so split sizes do not perturb one another.
pub fn synth_generate<T: Scalar>(
    cfg: &SynthConfig,
    n_labelled: usize,
    n_unlabelled: usize,
) -> Result<SynthDataset<T>> {
    cfg.validate()?;
    Ok(SynthDataset {
        labelled: generate_split(cfg, Split::Labelled, n_labelled)?,
        unlabelled: generate_split(cfg, Split::Unlabelled, n_unlabelled)?,
        eval: generate_split(cfg, Split::Eval, cfg.n_eval)?,
    })
}

/// Rendered scenes for one split, with raw depth, for writing to disk.
pub fn render_split(cfg: &SynthConfig, split: &str, n: usize) -> Result<Vec<(String, Scene)>> {
    let split = match split {
        "l" => Split::Labelled,
        "u" => Split::Unlabelled,
        "e" => Split::Eval,
        other => return Err(Error::Argument(format!("unknown split '{other}'"))),
    };
    Ok((0..n)
        .map(|i| {
            let mut rng = sample_rng(cfg, split, i);
            (
                sample_id(&cfg.domain, split.tag(), i),
                render_scene(cfg, &mut rng),
            )
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bar_grasps_follow_the_normal() {
        for &normal in &[-1.0, -0.3, 0.0, 0.7, 1.04] {
            let gs = bar_grasps(30.0, 30.0, normal, 30.0, 6.0, 5);
            assert_eq!(gs.len(), 5);
            for g in &gs {
                assert!((g.theta - normal).abs() < 1e-6);
                // Centres lie on the bar axis: zero offset along the normal.
                let off = (g.x - 30.0) * normal.cos() + (g.y - 30.0) * normal.sin();
                assert!(off.abs() < 1e-9);
                assert!(g.w > 6.0);
            }
        }
    }

    #[test]
    fn grasps_sit_on_their_object() {
        let cfg = SynthConfig::source(3);
        for i in 0..30 {
            let mut rng = sample_rng(&cfg, Split::Labelled, i);
            let objects = place_objects(&cfg, &mut rng);
            for o in &objects {
                for g in o.grasps(3) {
                    assert!(o.contains(g.x, g.y), "{:?} outside {:?}", g, o.kind);
                }
            }
        }
    }

    #[test]
    fn every_labelled_scene_has_grasps() {
        let ds = synth_generate::<f32>(
            &SynthConfig {
                n_eval: 20,
                ..SynthConfig::target(1)
            },
            20,
            5,
        )
        .unwrap();
        for s in ds.labelled.iter().chain(&ds.eval) {
            assert!(s.labelled && s.annotations.len() <= 5);
        }
        assert!(ds
            .unlabelled
            .iter()
            .all(|s| !s.labelled && s.depth.is_none()));
    }
}
