//! Shared test oracles.
#![allow(dead_code)]

use graspmt::autodiff::{ParamStore, Tape, Tensor, Var};
use graspmt::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Uniform values with magnitude in `[gap, hi]`, random sign; keeps inputs off kinks at 0.
pub fn away_from_zero(shape: &[usize], gap: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(gap..hi);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// ‖a − n‖ / max(‖a‖, ‖n‖), zero when both vanish.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Reduces a tensor-valued output to a scalar through a fixed random projection, so
/// every output element contributes a distinct weight.
pub fn project(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let w = uniform(&shape, -1.0, 1.0, &mut rng(seed));
    let p = tape.mul_const(out, &w)?;
    tape.sum(p)
}

/// Compares reverse-mode gradients of `f` with respect to every input element against
/// central differences. Returns the norm-wise relative error over all elements.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], f: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone(), false)).collect();
        let l = f(&mut tape, &vars).unwrap();
        tape.value(l).item()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
    let loss = f(&mut tape, &vars).unwrap();
    let grads = tape.backward(loss).unwrap();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (k, v) in vars.iter().enumerate() {
        let g = grads
            .get(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        analytic.extend_from_slice(g.data());
        for i in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_EPS;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_EPS;
            numeric.push((eval(&plus) - eval(&minus)) / (2.0 * FD_EPS));
        }
    }
    rel_error(&analytic, &numeric)
}

/// Like [`check_inputs`] but for parameters in a store, on a sample of `n` elements.
/// Elements where the two one-sided differences disagree by more than 1% straddle a
/// relu kink within ±ε; central differences are meaningless there, so another
/// element is drawn instead.
pub fn check_params<F>(store: &ParamStore<f64>, n: usize, seed: u64, f: F) -> f64
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store).unwrap();
    let f0 = tape.value(loss).item();
    let mut with_grads = store.clone();
    with_grads.zero_grad();
    tape.backward_into(loss, &mut with_grads).unwrap();

    let sizes: Vec<(String, usize)> = store
        .iter()
        .map(|p| (p.name.clone(), p.value.len()))
        .collect();
    let total: usize = sizes.iter().map(|s| s.1).sum();
    let mut r = rng(seed);
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut draws = 0;
    while analytic.len() < n {
        draws += 1;
        assert!(draws < 50 * n, "too many elements near a kink");
        let mut flat = r.random_range(0..total);
        let (name, idx) = sizes
            .iter()
            .find_map(|(name, len)| {
                if flat < *len {
                    Some((name.clone(), flat))
                } else {
                    flat -= len;
                    None
                }
            })
            .unwrap();
        let perturbed = |delta: f64| {
            let mut s = store.clone();
            let id = s.id(&name).unwrap();
            s.get_mut(id).value.data_mut()[idx] += delta;
            let mut t = Tape::new();
            let l = f(&mut t, &s).unwrap();
            t.value(l).item()
        };
        let (up, down) = (perturbed(FD_EPS), perturbed(-FD_EPS));
        let (right, left) = ((up - f0) / FD_EPS, (f0 - down) / FD_EPS);
        if (right - left).abs() > 1e-2 * right.abs().max(left.abs()).max(1e-6) {
            continue;
        }
        analytic.push(with_grads.by_name(&name).unwrap().grad.data()[idx]);
        numeric.push((up - down) / (2.0 * FD_EPS));
    }
    rel_error(&analytic, &numeric)
}

/// Worst finite-difference error of each tape primitive over three seeded shapes.
pub fn primitive_checks() -> Vec<(&'static str, f64)> {
    let shapes2 = [[2usize, 3], [4, 1], [3, 5]];
    let mut out = Vec::new();
    let mut worst = |name: &'static str, errs: Vec<f64>| {
        out.push((name, errs.into_iter().fold(0.0, f64::max)));
    };
    let s = |i: usize| 100 + i as u64;

    worst(
        "matmul",
        [(2, 3, 4), (1, 5, 2), (4, 4, 3)]
            .iter()
            .enumerate()
            .map(|(i, &(m, k, n))| {
                let mut r = rng(s(i));
                let a = uniform(&[m, k], -1.0, 1.0, &mut r);
                let b = uniform(&[k, n], -1.0, 1.0, &mut r);
                check_inputs(&[a, b], |t, v| {
                    let o = t.matmul(v[0], v[1])?;
                    project(t, o, 7)
                })
            })
            .collect(),
    );

    let conv_cases = [
        (1usize, 5usize, 5usize, 2usize, 3usize, 1usize, true),
        (2, 6, 4, 3, 3, 2, true),
        (3, 4, 4, 2, 1, 1, false),
        (2, 7, 7, 2, 3, 2, false),
    ];
    worst(
        "conv2d",
        conv_cases
            .iter()
            .enumerate()
            .map(|(i, &(c, h, w, o, k, stride, bias))| {
                let mut r = rng(s(i));
                let x = uniform(&[c, h, w], -1.0, 1.0, &mut r);
                let kern = uniform(&[o, c, k, k], -1.0, 1.0, &mut r);
                let b = uniform(&[o], -1.0, 1.0, &mut r);
                let mut ins = vec![x, kern];
                if bias {
                    ins.push(b);
                }
                check_inputs(&ins, |t, v| {
                    let o = t.conv2d(v[0], v[1], v.get(2).copied(), stride)?;
                    project(t, o, 8)
                })
            })
            .collect(),
    );

    for (name, op) in [("add", 0), ("sub", 1), ("mul", 2)] {
        worst(
            name,
            shapes2
                .iter()
                .enumerate()
                .map(|(i, sh)| {
                    let mut r = rng(s(i));
                    let a = uniform(sh, -1.0, 1.0, &mut r);
                    let b = uniform(sh, -1.0, 1.0, &mut r);
                    check_inputs(&[a, b], |t, v| {
                        let o = match op {
                            0 => t.add(v[0], v[1])?,
                            1 => t.sub(v[0], v[1])?,
                            _ => t.mul(v[0], v[1])?,
                        };
                        project(t, o, 9)
                    })
                })
                .collect(),
        );
    }

    worst(
        "add_row_bias",
        shapes2
            .iter()
            .enumerate()
            .map(|(i, sh)| {
                let mut r = rng(s(i));
                let a = uniform(sh, -1.0, 1.0, &mut r);
                let b = uniform(&[sh[1]], -1.0, 1.0, &mut r);
                check_inputs(&[a, b], |t, v| {
                    let o = t.add_row_bias(v[0], v[1])?;
                    project(t, o, 10)
                })
            })
            .collect(),
    );

    worst(
        "scale",
        shapes2
            .iter()
            .enumerate()
            .map(|(i, sh)| {
                let a = uniform(sh, -1.0, 1.0, &mut rng(s(i)));
                check_inputs(&[a], |t, v| {
                    let o = t.scale(v[0], -1.7)?;
                    project(t, o, 11)
                })
            })
            .collect(),
    );

    worst(
        "mul_const",
        shapes2
            .iter()
            .enumerate()
            .map(|(i, sh)| {
                let mut r = rng(s(i));
                let a = uniform(sh, -1.0, 1.0, &mut r);
                let c = uniform(sh, -2.0, 2.0, &mut r);
                check_inputs(&[a], |t, v| {
                    let o = t.mul_const(v[0], &c)?;
                    project(t, o, 12)
                })
            })
            .collect(),
    );

    worst(
        "relu",
        shapes2
            .iter()
            .enumerate()
            .map(|(i, sh)| {
                let a = away_from_zero(sh, 0.05, 1.0, &mut rng(s(i)));
                check_inputs(&[a], |t, v| {
                    let o = t.relu(v[0])?;
                    project(t, o, 13)
                })
            })
            .collect(),
    );

    worst(
        "sigmoid",
        shapes2
            .iter()
            .enumerate()
            .map(|(i, sh)| {
                let a = uniform(sh, -3.0, 3.0, &mut rng(s(i)));
                check_inputs(&[a], |t, v| {
                    let o = t.sigmoid(v[0])?;
                    project(t, o, 14)
                })
            })
            .collect(),
    );

    worst(
        "tanh",
        shapes2
            .iter()
            .enumerate()
            .map(|(i, sh)| {
                let a = uniform(sh, -2.0, 2.0, &mut rng(s(i)));
                check_inputs(&[a], |t, v| {
                    let o = t.tanh(v[0])?;
                    project(t, o, 15)
                })
            })
            .collect(),
    );

    worst(
        "upsample2x",
        [[1usize, 2, 2], [2, 3, 2], [3, 1, 4]]
            .iter()
            .enumerate()
            .map(|(i, sh)| {
                let a = uniform(sh, -1.0, 1.0, &mut rng(s(i)));
                check_inputs(&[a], |t, v| {
                    let o = t.upsample2x(v[0])?;
                    project(t, o, 16)
                })
            })
            .collect(),
    );

    worst(
        "crop",
        [
            ([1usize, 4, 4], 1usize, 0usize, 3usize),
            ([2, 5, 5], 2, 2, 3),
            ([3, 3, 3], 0, 0, 1),
        ]
        .iter()
        .enumerate()
        .map(|(i, (sh, top, left, size))| {
            let a = uniform(sh, -1.0, 1.0, &mut rng(s(i)));
            check_inputs(&[a], |t, v| {
                let o = t.crop(v[0], *top, *left, *size)?;
                project(t, o, 17)
            })
        })
        .collect(),
    );

    worst(
        "gather",
        [
            (vec![6usize], vec![0usize, 2, 2, 5]),
            (vec![2, 3], vec![1, 4]),
            (vec![3, 2, 2], vec![11, 0, 7, 7, 7]),
        ]
        .iter()
        .enumerate()
        .map(|(i, (sh, idx))| {
            let a = uniform(sh, -1.0, 1.0, &mut rng(s(i)));
            check_inputs(&[a], |t, v| {
                let o = t.gather(v[0], idx)?;
                project(t, o, 18)
            })
        })
        .collect(),
    );

    worst(
        "stack_rows",
        [[2usize, 2, 2], [1, 3, 1], [3, 1, 2]]
            .iter()
            .enumerate()
            .map(|(i, sh)| {
                let mut r = rng(s(i));
                let a = uniform(sh, -1.0, 1.0, &mut r);
                let b = uniform(sh, -1.0, 1.0, &mut r);
                check_inputs(&[a, b], |t, v| {
                    let o = t.stack_rows(&[v[0], v[1], v[0]])?;
                    project(t, o, 19)
                })
            })
            .collect(),
    );

    worst(
        "reshape",
        shapes2
            .iter()
            .enumerate()
            .map(|(i, sh)| {
                let a = uniform(sh, -1.0, 1.0, &mut rng(s(i)));
                check_inputs(&[a], |t, v| {
                    let o = t.reshape(v[0], &[sh[0] * sh[1]])?;
                    project(t, o, 20)
                })
            })
            .collect(),
    );

    worst(
        "sum",
        shapes2
            .iter()
            .enumerate()
            .map(|(i, sh)| {
                let a = uniform(sh, -1.0, 1.0, &mut rng(s(i)));
                check_inputs(&[a], |t, v| {
                    let o = t.mul(v[0], v[0])?;
                    t.sum(o)
                })
            })
            .collect(),
    );

    worst(
        "mean",
        shapes2
            .iter()
            .enumerate()
            .map(|(i, sh)| {
                let a = uniform(sh, -1.0, 1.0, &mut rng(s(i)));
                check_inputs(&[a], |t, v| {
                    let o = t.mul(v[0], v[0])?;
                    t.mean(o)
                })
            })
            .collect(),
    );

    worst(
        "smooth_l1",
        shapes2
            .iter()
            .enumerate()
            .map(|(i, sh)| {
                let mut r = rng(s(i));
                let target = uniform(sh, -1.0, 1.0, &mut r);
                // Differences either well inside or well outside the quadratic zone.
                let d = Tensor::from_fn(sh, |_| {
                    let m = if r.random_bool(0.5) {
                        r.random_range(0.05..0.9)
                    } else {
                        r.random_range(1.1..2.5)
                    };
                    if r.random_bool(0.5) {
                        m
                    } else {
                        -m
                    }
                });
                let mut p = target.clone();
                for (x, dx) in p.data_mut().iter_mut().zip(d.data()) {
                    *x += dx;
                }
                check_inputs(&[p], |t, v| t.smooth_l1(v[0], &target))
            })
            .collect(),
    );

    worst(
        "bce",
        shapes2
            .iter()
            .enumerate()
            .map(|(i, sh)| {
                let mut r = rng(s(i));
                let p = uniform(sh, 0.05, 0.95, &mut r);
                let target = Tensor::from_fn(sh, |_| if r.random_bool(0.3) { 1.0 } else { 0.0 });
                check_inputs(&[p], |t, v| t.bce(v[0], &target))
            })
            .collect(),
    );

    worst(
        "mse",
        shapes2
            .iter()
            .enumerate()
            .map(|(i, sh)| {
                let mut r = rng(s(i));
                let p = uniform(sh, -1.0, 1.0, &mut r);
                let target = uniform(sh, -1.0, 1.0, &mut r);
                check_inputs(&[p], |t, v| t.mse(v[0], &target))
            })
            .collect(),
    );

    out
}

/// Small model for network-level checks.
pub fn tiny_model() -> graspmt::model::ModelConfig {
    graspmt::model::ModelConfig {
        input_size: 48,
        stage_channels: [2, 3, 4, 5],
        decoder_channels: 3,
        pose_hidden: 4,
        ..graspmt::model::ModelConfig::default()
    }
}

/// Finite-difference error of the full training loss (pose + heatmap) over a 10-element
/// parameter subsample of a tiny RGB-D network.
pub fn network_check(seed: u64) -> f64 {
    use graspmt::geometry::GraspRect;
    use graspmt::model::{encode, init_params, locnet_forward};
    use graspmt::train::{location_target, supervised_pose_loss};

    let cfg = tiny_model();
    let store = init_params::<f64>(&cfg, seed).unwrap();
    let mut r = rng(seed + 1000);
    let rgb = uniform(&[3, 48, 48], 0.0, 1.0, &mut r);
    let depth = uniform(&[3, 48, 48], -1.0, 1.0, &mut r);
    let anns = vec![
        GraspRect::new(20.3, 17.8, 0.4, 10.0, 6.0).unwrap(),
        GraspRect::new(31.0, 30.2, -0.7, 12.0, 5.0).unwrap(),
    ];
    let sample = graspmt::data::Sample::new("fd", rgb, Some(depth), anns, "test").unwrap();
    let target = location_target(&cfg, &sample).unwrap();
    check_params(&store, 10, seed, |tape, store| {
        let feats = encode(tape, store, &cfg, &sample.rgb, sample.depth.as_ref())?;
        let pose = supervised_pose_loss(tape, store, &cfg, &feats, &sample)?;
        let hm = locnet_forward(tape, store, &feats)?;
        let loc = tape.bce(hm, &target)?;
        tape.add(pose, loc)
    })
}

/// Relative error the oracle reports for a hand-written wrong derivative.
pub fn analytic_vs_numeric_wrong() -> f64 {
    let xs = [0.3, -1.2, 2.0];
    let analytic: Vec<f64> = xs.to_vec();
    let numeric: Vec<f64> = xs
        .iter()
        .map(|x| ((x + FD_EPS).powi(2) - (x - FD_EPS).powi(2)) / (2.0 * FD_EPS))
        .collect();
    rel_error(&analytic, &numeric)
}

fn inside(r: &graspmt::geometry::GraspRect<f64>, px: f64, py: f64) -> bool {
    let (s, c) = r.theta.sin_cos();
    let (dx, dy) = (px - r.x, py - r.y);
    (dx * c + dy * s).abs() <= r.w / 2.0 && (-dx * s + dy * c).abs() <= r.h / 2.0
}

/// IoU estimated by uniform sampling over the bounding box of both rectangles.
pub fn monte_carlo_iou(
    a: &graspmt::geometry::GraspRect<f64>,
    b: &graspmt::geometry::GraspRect<f64>,
    samples: usize,
    r: &mut impl Rng,
) -> f64 {
    let corners: Vec<[f64; 2]> = a.vertices().into_iter().chain(b.vertices()).collect();
    let (x0, x1) = corners.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| {
        (lo.min(p[0]), hi.max(p[0]))
    });
    let (y0, y1) = corners.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| {
        (lo.min(p[1]), hi.max(p[1]))
    });
    let (mut both, mut either) = (0u64, 0u64);
    for _ in 0..samples {
        let px = r.random_range(x0..x1);
        let py = r.random_range(y0..y1);
        let (ia, ib) = (inside(a, px, py), inside(b, px, py));
        both += (ia && ib) as u64;
        either += (ia || ib) as u64;
    }
    if either == 0 {
        0.0
    } else {
        both as f64 / either as f64
    }
}

/// A random pair of rectangles that overlap often enough to exercise partial IoU.
pub fn random_rect_pair(
    r: &mut impl Rng,
) -> (
    graspmt::geometry::GraspRect<f64>,
    graspmt::geometry::GraspRect<f64>,
) {
    use graspmt::geometry::GraspRect;
    let mut one = |cx: f64, cy: f64| {
        GraspRect::new(
            cx + r.random_range(-6.0..6.0),
            cy + r.random_range(-6.0..6.0),
            r.random_range(-3.2..3.2),
            r.random_range(2.0..20.0),
            r.random_range(2.0..20.0),
        )
        .unwrap()
    };
    let a = one(0.0, 0.0);
    let b = one(a.x, a.y);
    (a, b)
}
