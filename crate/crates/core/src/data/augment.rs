//! Geometric and photometric augmentation with the applied transform recorded so
//! predictions can be mapped back to the original frame.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::geometry::{normalize_angle, GraspRect};
use crate::scalar::Scalar;

use super::preprocess::sobel;
use super::Sample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    /// Allow quarter-turn rotations.
    pub rotate90: bool,
    /// Maximum integer translation in pixels per axis.
    pub max_shift: i32,
    pub brightness: (f64, f64),
    pub noise_sigma: f64,
    /// Probability of removing the depth map, so the RGB branch has to carry the
    /// prediction on its own.
    pub depth_dropout: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_prob: 0.5,
            rotate90: true,
            max_shift: 2,
            brightness: (0.8, 1.2),
            noise_sigma: 0.02,
            depth_dropout: 0.0,
        }
    }
}

impl AugmentConfig {
    /// The subset used on unlabelled data: pose targets must map back linearly, so
    /// no rotations.
    pub fn consistency() -> Self {
        AugmentConfig {
            rotate90: false,
            ..Self::default()
        }
    }

    pub fn none() -> Self {
        AugmentConfig {
            flip_prob: 0.0,
            rotate90: false,
            max_shift: 0,
            brightness: (1.0, 1.0),
            noise_sigma: 0.0,
            depth_dropout: 0.0,
        }
    }
}

/// Horizontal flip, then `quarter_turns` rotations by +π/2, then a shift, on a
/// `size × size` frame. Pixel `i` spans `[i, i+1)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub size: usize,
    pub flip: bool,
    pub quarter_turns: u8,
    pub dx: i32,
    pub dy: i32,
}

impl GeoTransform {
    pub fn identity(size: usize) -> Self {
        GeoTransform {
            size,
            ..Default::default()
        }
    }

    pub fn apply_point(&self, x: f64, y: f64) -> (f64, f64) {
        let s = self.size as f64;
        let (mut x, mut y) = if self.flip { (s - x, y) } else { (x, y) };
        for _ in 0..self.quarter_turns % 4 {
            (x, y) = (s - y, x);
        }
        (x + self.dx as f64, y + self.dy as f64)
    }

    pub fn invert_point(&self, x: f64, y: f64) -> (f64, f64) {
        let s = self.size as f64;
        let (mut x, mut y) = (x - self.dx as f64, y - self.dy as f64);
        for _ in 0..self.quarter_turns % 4 {
            (x, y) = (y, s - x);
        }
        if self.flip {
            x = s - x;
        }
        (x, y)
    }

    pub fn apply_theta(&self, theta: f64) -> f64 {
        let t = if self.flip { -theta } else { theta };
        normalize_angle(t + self.quarter_turns as f64 * std::f64::consts::FRAC_PI_2)
    }

    /// Source pixel feeding output pixel `(ox, oy)`, if inside the frame.
    fn source_pixel(&self, ox: usize, oy: usize) -> Option<(usize, usize)> {
        let n = self.size as i64;
        let (mut x, mut y) = (ox as i64 - self.dx as i64, oy as i64 - self.dy as i64);
        if !(0..n).contains(&x) || !(0..n).contains(&y) {
            return None;
        }
        for _ in 0..self.quarter_turns % 4 {
            (x, y) = (y, n - 1 - x);
        }
        if self.flip {
            x = n - 1 - x;
        }
        Some((x as usize, y as usize))
    }

    pub fn apply_image<T: Scalar>(&self, t: &Tensor<T>) -> Tensor<T> {
        let c = t.shape()[0];
        let mut out = Tensor::zeros(&[c, self.size, self.size]);
        for oy in 0..self.size {
            for ox in 0..self.size {
                if let Some((x, y)) = self.source_pixel(ox, oy) {
                    for ch in 0..c {
                        out.set3(ch, oy, ox, t.at3(ch, y, x));
                    }
                }
            }
        }
        out
    }

    /// Moves an annotation; `None` when its centre leaves the frame.
    pub fn apply_rect<T: Scalar>(&self, r: &GraspRect<T>) -> Option<GraspRect<T>> {
        let (x, y) = self.apply_point(r.x.as_f64(), r.y.as_f64());
        let s = self.size as f64;
        if !(0.0..s).contains(&x) || !(0.0..s).contains(&y) {
            return None;
        }
        GraspRect::new(
            T::lit(x),
            T::lit(y),
            T::lit(self.apply_theta(r.theta.as_f64())),
            r.w,
            r.h,
        )
        .ok()
    }

    /// Per-component signs that map a normalised pose `(θ̂, ŵ, ĥ)` predicted in the
    /// augmented frame back to the original one. `None` if a rotation was applied,
    /// since a quarter turn is not linear in `θ̂`.
    pub fn pose_signs(&self) -> Option<[f64; 3]> {
        if !self.quarter_turns.is_multiple_of(4) {
            return None;
        }
        Some([if self.flip { -1.0 } else { 1.0 }, 1.0, 1.0])
    }
}

/// Applies a random augmentation drawn from `seed`. Depth maps share the geometric
/// part; brightness and noise touch RGB only.
pub fn augment<T: Scalar>(
    sample: &Sample<T>,
    cfg: &AugmentConfig,
    seed: u64,
) -> (Sample<T>, GeoTransform) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = sample.width();
    let geo = GeoTransform {
        size,
        flip: cfg.flip_prob > 0.0 && rng.random_bool(cfg.flip_prob.min(1.0)),
        quarter_turns: if cfg.rotate90 {
            rng.random_range(0..4)
        } else {
            0
        },
        dx: if cfg.max_shift > 0 {
            rng.random_range(-cfg.max_shift..=cfg.max_shift)
        } else {
            0
        },
        dy: if cfg.max_shift > 0 {
            rng.random_range(-cfg.max_shift..=cfg.max_shift)
        } else {
            0
        },
    };
    let (lo, hi) = cfg.brightness;
    let gain = if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    };
    let mut out = photometric(sample, &geo, gain, cfg.noise_sigma, &mut rng);
    if cfg.depth_dropout > 0.0 && rng.random_bool(cfg.depth_dropout.min(1.0)) {
        out.depth = None;
    }
    (out, geo)
}

/// Applies a fixed transform with no photometric change.
pub fn apply_transform<T: Scalar>(sample: &Sample<T>, geo: &GeoTransform) -> Sample<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    photometric(sample, geo, 1.0, 0.0, &mut rng)
}

fn photometric<T: Scalar>(
    sample: &Sample<T>,
    geo: &GeoTransform,
    gain: f64,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Sample<T> {
    assert_eq!(
        sample.width(),
        sample.height(),
        "augmentation needs square images"
    );
    let mut rgb = geo.apply_image(&sample.rgb);
    if gain != 1.0 || sigma > 0.0 {
        let noise = Normal::new(0.0, sigma.max(1e-12)).expect("valid sigma");
        for v in rgb.data_mut() {
            let n = if sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            *v = T::lit((v.as_f64() * gain + n).clamp(0.0, 1.0));
        }
    }
    let annotations: Vec<_> = sample
        .annotations
        .iter()
        .filter_map(|a| geo.apply_rect(a))
        .collect();
    Sample {
        id: sample.id.clone(),
        rgb,
        depth: sample.depth.as_ref().map(|d| regrade(geo.apply_image(d))),
        labelled: !annotations.is_empty(),
        annotations,
        domain: sample.domain.clone(),
    }
}

/// Recomputes the gradient channels of a moved 3-channel depth map: mirroring or
/// turning the image changes the sign and axis of the gradients.
fn regrade<T: Scalar>(mut d: Tensor<T>) -> Tensor<T> {
    let (h, w) = (d.shape()[1], d.shape()[2]);
    let gx = sobel(&d.data()[..h * w], h, w, true);
    let gy = sobel(&d.data()[..h * w], h, w, false);
    d.data_mut()[h * w..2 * h * w].copy_from_slice(&gx);
    d.data_mut()[2 * h * w..].copy_from_slice(&gy);
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geo(flip: bool, q: u8, dx: i32, dy: i32) -> GeoTransform {
        GeoTransform {
            size: 16,
            flip,
            quarter_turns: q,
            dx,
            dy,
        }
    }

    #[test]
    fn point_round_trip() {
        for flip in [false, true] {
            for q in 0..4 {
                let g = geo(flip, q, 2, -1);
                let (x, y) = g.apply_point(3.25, 7.5);
                let (bx, by) = g.invert_point(x, y);
                assert!((bx - 3.25).abs() < 1e-12 && (by - 7.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn image_and_point_maps_agree() {
        // A single lit pixel must land where its centre maps to.
        let mut img = Tensor::<f64>::zeros(&[1, 16, 16]);
        img.set3(0, 3, 5, 1.0);
        for flip in [false, true] {
            for q in 0..4 {
                let g = geo(flip, q, 1, 2);
                let out = g.apply_image(&img);
                let (x, y) = g.apply_point(5.5, 3.5);
                assert_eq!(out.at3(0, y.floor() as usize, x.floor() as usize), 1.0);
                assert_eq!(out.sum(), 1.0);
            }
        }
    }

    #[test]
    fn flip_negates_and_rotation_adds_quarter_turn() {
        assert!((geo(true, 0, 0, 0).apply_theta(0.4) + 0.4).abs() < 1e-12);
        let t = geo(false, 1, 0, 0).apply_theta(0.4);
        assert!((t - normalize_angle(0.4 + std::f64::consts::FRAC_PI_2)).abs() < 1e-12);
        assert_eq!(geo(true, 0, 1, 1).pose_signs(), Some([-1.0, 1.0, 1.0]));
        assert_eq!(geo(false, 1, 0, 0).pose_signs(), None);
    }

    #[test]
    fn augment_keeps_labels_when_centres_stay() {
        let rect = GraspRect::new(8.0f32, 8.0, 0.2, 4.0, 2.0).unwrap();
        let s = Sample::new("a", Tensor::full(&[3, 16, 16], 0.5), None, vec![rect], "d").unwrap();
        for seed in 0..20 {
            let (a, g) = augment(&s, &AugmentConfig::default(), seed);
            assert!(a.labelled);
            assert_eq!(a.annotations.len(), 1);
            assert!(a.rgb.data().iter().all(|v| (0.0..=1.0).contains(v)));
            let (x, y) = g.apply_point(8.0, 8.0);
            assert!((a.annotations[0].x as f64 - x).abs() < 1e-5);
            assert!((a.annotations[0].y as f64 - y).abs() < 1e-5);
        }
    }
}
