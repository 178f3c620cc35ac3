//! Resize/crop pipeline and the depth → 3-channel encoding.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::geometry::GraspRect;
use crate::scalar::Scalar;

/// Resize to `resize` (width, height), then centre-crop a `crop × crop` square.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocess {
    pub resize: (usize, usize),
    pub crop: usize,
}

impl Default for Preprocess {
    fn default() -> Self {
        Preprocess {
            resize: (456, 342),
            crop: 288,
        }
    }
}

/// Bilinear resampling of `C×H×W` with pixel-centre alignment.
pub fn resize_bilinear<T: Scalar>(t: &Tensor<T>, new_h: usize, new_w: usize) -> Tensor<T> {
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let sy = h as f64 / new_h as f64;
    let sx = w as f64 / new_w as f64;
    let taps = |o: usize, scale: f64, n: usize| {
        let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, src - i0 as f64)
    };
    let ys: Vec<_> = (0..new_h).map(|o| taps(o, sy, h)).collect();
    let xs: Vec<_> = (0..new_w).map(|o| taps(o, sx, w)).collect();
    let mut out = Tensor::zeros(&[c, new_h, new_w]);
    for ch in 0..c {
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let v00 = t.at3(ch, y0, x0).as_f64();
                let v01 = t.at3(ch, y0, x1).as_f64();
                let v10 = t.at3(ch, y1, x0).as_f64();
                let v11 = t.at3(ch, y1, x1).as_f64();
                let top = v00 + (v01 - v00) * fx;
                let bot = v10 + (v11 - v10) * fx;
                out.set3(ch, oy, ox, T::lit(top + (bot - top) * fy));
            }
        }
    }
    out
}

pub fn crop<T: Scalar>(t: &Tensor<T>, top: usize, left: usize, h: usize, w: usize) -> Tensor<T> {
    let c = t.shape()[0];
    let mut out = Tensor::zeros(&[c, h, w]);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out.set3(ch, y, x, t.at3(ch, top + y, left + x));
            }
        }
    }
    out
}

/// Maps an annotation through a scale then a translation; `None` when its centre leaves `[0, size)`.
pub fn transform_rect<T: Scalar>(
    r: &GraspRect<T>,
    sx: f64,
    sy: f64,
    dx: f64,
    dy: f64,
    out_w: usize,
    out_h: usize,
) -> Option<GraspRect<T>> {
    let x = r.x.as_f64() * sx + dx;
    let y = r.y.as_f64() * sy + dy;
    if !(0.0..out_w as f64).contains(&x) || !(0.0..out_h as f64).contains(&y) {
        return None;
    }
    // Anisotropic scaling would shear the rectangle; direction and lengths are mapped
    // through the axis scales.
    let (s, c) = r.theta.as_f64().sin_cos();
    let (ux, uy) = (c * sx, s * sy);
    let (vx, vy) = (-s * sx, c * sy);
    let w = r.w.as_f64() * ux.hypot(uy);
    let h = r.h.as_f64() * vx.hypot(vy);
    GraspRect::new(
        T::lit(x),
        T::lit(y),
        T::lit(uy.atan2(ux)),
        T::lit(w),
        T::lit(h),
    )
    .ok()
}

impl Preprocess {
    /// Resizes, centre-crops and moves annotations along; annotations whose centre
    /// leaves the crop are dropped.
    pub fn apply<T: Scalar>(
        &self,
        image: &Tensor<T>,
        annotations: &[GraspRect<T>],
    ) -> Result<(Tensor<T>, Vec<GraspRect<T>>)> {
        let (h, w) = (image.shape()[1], image.shape()[2]);
        let (rw, rh) = self.resize;
        if rw < self.crop || rh < self.crop {
            return Err(Error::Argument(format!(
                "resize {rw}×{rh} smaller than crop {}",
                self.crop
            )));
        }
        let resized = resize_bilinear(image, rh, rw);
        let (top, left) = ((rh - self.crop) / 2, (rw - self.crop) / 2);
        let out = crop(&resized, top, left, self.crop, self.crop);
        let (sx, sy) = (rw as f64 / w as f64, rh as f64 / h as f64);
        let anns = annotations
            .iter()
            .filter_map(|a| {
                transform_rect(
                    a,
                    sx,
                    sy,
                    -(left as f64),
                    -(top as f64),
                    self.crop,
                    self.crop,
                )
            })
            .collect();
        Ok((out, anns))
    }
}

/// Resizes a square image and its annotations to `size × size`.
pub fn rescale<T: Scalar>(
    image: &Tensor<T>,
    annotations: &[GraspRect<T>],
    size: usize,
) -> (Tensor<T>, Vec<GraspRect<T>>) {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    if h == size && w == size {
        return (image.clone(), annotations.to_vec());
    }
    let out = resize_bilinear(image, size, size);
    let (sx, sy) = (size as f64 / w as f64, size as f64 / h as f64);
    let anns = annotations
        .iter()
        .filter_map(|a| transform_rect(a, sx, sy, 0.0, 0.0, size, size))
        .collect();
    (out, anns)
}

/// Replaces zero (missing) readings with the nearest valid neighbour, breadth-first in
/// 4-connectivity with a fixed neighbour order.
pub fn inpaint_missing<T: Scalar>(depth: &mut [T], h: usize, w: usize) -> Result<()> {
    let mut queue = VecDeque::new();
    let mut filled = vec![false; h * w];
    for (i, &d) in depth.iter().enumerate() {
        if d != T::zero() && d.is_finite() {
            filled[i] = true;
            queue.push_back(i);
        }
    }
    if queue.is_empty() {
        return Err(Error::Data("depth map has no valid readings".into()));
    }
    while let Some(i) = queue.pop_front() {
        let (y, x) = (i / w, i % w);
        let mut visit = |j: usize| {
            if !filled[j] {
                filled[j] = true;
                depth[j] = depth[i];
                queue.push_back(j);
            }
        };
        if y > 0 {
            visit(i - w);
        }
        if x > 0 {
            visit(i - 1);
        }
        if x + 1 < w {
            visit(i + 1);
        }
        if y + 1 < h {
            visit(i + w);
        }
    }
    Ok(())
}

/// Horizontal (`dx = true`) or vertical Sobel response of an `H×W` map, scaled by 1/8
/// so a unit-slope ramp responds with 1. Borders replicate the edge pixel.
pub fn sobel<T: Scalar>(m: &[T], h: usize, w: usize, dx: bool) -> Vec<T> {
    let at = |y: isize, x: isize| {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        m[y * w + x]
    };
    let two = T::lit(2.0);
    let eighth = T::lit(0.125);
    let mut out = vec![T::zero(); h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let g = if dx {
                (at(y - 1, x + 1) + two * at(y, x + 1) + at(y + 1, x + 1))
                    - (at(y - 1, x - 1) + two * at(y, x - 1) + at(y + 1, x - 1))
            } else {
                (at(y + 1, x - 1) + two * at(y + 1, x) + at(y + 1, x + 1))
                    - (at(y - 1, x - 1) + two * at(y - 1, x) + at(y - 1, x + 1))
            };
            out[y as usize * w + x as usize] = g * eighth;
        }
    }
    out
}

/// Depth `1×H×W` → standardised depth plus its x/y gradients (`3×H×W`).
/// Zero readings are treated as missing and inpainted first.
pub fn depth_to_3ch<T: Scalar>(depth: &Tensor<T>) -> Result<Tensor<T>> {
    let [1, h, w] = depth.shape() else {
        return Err(Error::Dimension(format!(
            "depth must be 1×H×W, got {:?}",
            depth.shape()
        )));
    };
    let (h, w) = (*h, *w);
    let mut d = depth.data().to_vec();
    inpaint_missing(&mut d, h, w)?;
    let n = (h * w) as f64;
    let mean = d.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let var = d.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-6);
    let norm: Vec<T> = d
        .iter()
        .map(|v| T::lit((v.as_f64() - mean) / std))
        .collect();
    let gx = sobel(&norm, h, w, true);
    let gy = sobel(&norm, h, w, false);
    let mut data = norm;
    data.extend(gx);
    data.extend(gy);
    Tensor::new(&[3, h, w], data)
}
