use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::data::{augment, AugmentConfig, GeoTransform, Sample};
use crate::error::{Error, Result};
use crate::model::{encode, posenet_forward, zero_depth, ModelConfig, Pyramid};
use crate::scalar::Scalar;
use crate::train::depth_input;

/// Maps original-frame locations into an augmented frame; `None` where one leaves it.
fn map_locs<T: Scalar>(geo: &GeoTransform, locs: &[(T, T)]) -> Vec<Option<(T, T)>> {
    let s = geo.size as f64;
    locs.iter()
        .map(|&(x, y)| {
            let (u, v) = geo.apply_point(x.as_f64(), y.as_f64());
            ((0.0..s).contains(&u) && (0.0..s).contains(&v)).then(|| (T::lit(u), T::lit(v)))
        })
        .collect()
}

fn frozen_features<T: Scalar>(
    store: &ParamStore<T>,
    cfg: &ModelConfig,
    s: &Sample<T>,
) -> Result<[Tensor<T>; 4]> {
    let zeros = zero_depth(cfg);
    let mut tape = Tape::inference();
    let feats = encode(&mut tape, store, cfg, &s.rgb, depth_input(cfg, s, &zeros))?;
    Ok(feats.tensors(&tape))
}

fn signs<T: Scalar>(geo: &GeoTransform, rows: usize) -> Result<Tensor<T>> {
    let s = geo.pose_signs().ok_or_else(|| {
        Error::Config("consistency views must not rotate; poses cannot be mapped back".into())
    })?;
    Ok(Tensor::from_fn(&[rows, 3], |i| T::lit(s[i % 3])))
}

/// Mean squared difference between the student's mean pose under view `mu` and the
/// teacher's under view `mu_prime`, both mapped back to the original frame, over the
/// locations visible in both views. The teacher side is a constant. `None` when every
/// location falls outside a view.
///
/// The backbone is treated as frozen: student features enter the tape as constants.
#[allow(clippy::too_many_arguments)]
pub fn consistency_loss<T: Scalar>(
    tape: &mut Tape<T>,
    student: &ParamStore<T>,
    teacher: &ParamStore<T>,
    cfg: &ModelConfig,
    sample: &Sample<T>,
    locs: &[(T, T)],
    aug: &AugmentConfig,
    mu: u64,
    mu_prime: u64,
) -> Result<Option<Var>> {
    let (s_view, s_geo) = augment(sample, aug, mu);
    let (t_view, t_geo) = augment(sample, aug, mu_prime);
    let (s_locs, t_locs): (Vec<_>, Vec<_>) = map_locs(&s_geo, locs)
        .into_iter()
        .zip(map_locs(&t_geo, locs))
        .filter_map(|(a, b)| Some((a?, b?)))
        .unzip();
    if s_locs.is_empty() {
        return Ok(None);
    }
    let n = s_locs.len();

    let mut t_tape = Tape::inference();
    let t_feats = frozen_features(teacher, cfg, &t_view)?;
    let t_pyr = Pyramid::constants(&mut t_tape, &t_feats);
    let t_pv = posenet_forward(&mut t_tape, teacher, cfg, &t_pyr, &t_locs)?;
    let t_signs = signs::<T>(&t_geo, n)?;
    let target = Tensor::new(
        &[n, 3],
        t_tape
            .value(t_pv.mean)
            .data()
            .iter()
            .zip(t_signs.data())
            .map(|(&v, &s)| v * s)
            .collect(),
    )?;

    let s_feats = frozen_features(student, cfg, &s_view)?;
    let s_pyr = Pyramid::constants(tape, &s_feats);
    let s_pv = posenet_forward(tape, student, cfg, &s_pyr, &s_locs)?;
    let mapped = tape.mul_const(s_pv.mean, &signs(&s_geo, n)?)?;
    Ok(Some(tape.mse(mapped, &target)?))
}
