use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Student `φ`, its exponential-moving-average teacher `φ′`, and the step count.
#[derive(Clone, Debug)]
pub struct TeacherStudent<T> {
    pub student: ParamStore<T>,
    pub teacher: ParamStore<T>,
    pub step: usize,
}

impl<T: Scalar> TeacherStudent<T> {
    pub fn new(params: ParamStore<T>) -> Self {
        TeacherStudent {
            teacher: params.clone(),
            student: params,
            step: 0,
        }
    }
}

/// `φ′ ← α·φ′ + (1 − α)·φ` for every parameter, written as `φ′ + (1 − α)(φ − φ′)`
/// so parameters on which both agree stay bit-identical.
pub fn ema_update<T: Scalar>(
    teacher: &mut ParamStore<T>,
    student: &ParamStore<T>,
    alpha: f64,
) -> Result<()> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Argument(format!(
            "alpha must lie in [0, 1), got {alpha}"
        )));
    }
    if !teacher.same_layout(student) {
        return Err(Error::Config(
            "teacher and student parameter layouts differ".into(),
        ));
    }
    let k = T::lit(1.0 - alpha);
    for (t, s) in teacher.iter_mut().zip(student.iter()) {
        for (tv, &sv) in t.value.data_mut().iter_mut().zip(s.value.data()) {
            *tv += k * (sv - *tv);
        }
    }
    Ok(())
}
