use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::geometry::GraspRect;
use crate::scalar::Scalar;

/// One observation: RGB (and optionally 3-channel depth) in `C×H×W` layout,
/// ground-truth grasps when labelled.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub id: String,
    pub rgb: Tensor<T>,
    pub depth: Option<Tensor<T>>,
    pub annotations: Vec<GraspRect<T>>,
    pub labelled: bool,
    pub domain: String,
}

impl<T: Scalar> Sample<T> {
    /// Builds a sample; labelled exactly when `annotations` is non-empty.
    pub fn new(
        id: impl Into<String>,
        rgb: Tensor<T>,
        depth: Option<Tensor<T>>,
        annotations: Vec<GraspRect<T>>,
        domain: impl Into<String>,
    ) -> Result<Self> {
        let s = Sample {
            id: id.into(),
            rgb,
            depth,
            labelled: !annotations.is_empty(),
            annotations,
            domain: domain.into(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let [3, h, w] = self.rgb.shape() else {
            return Err(Error::Data(format!(
                "{}: rgb must be 3×H×W, got {:?}",
                self.id,
                self.rgb.shape()
            )));
        };
        if let Some(d) = &self.depth {
            if d.shape() != [3, *h, *w] {
                return Err(Error::Data(format!(
                    "{}: depth {:?} does not match rgb {:?}",
                    self.id,
                    d.shape(),
                    self.rgb.shape()
                )));
            }
        }
        if self.labelled == self.annotations.is_empty() {
            return Err(Error::Data(format!(
                "{}: labelled flag disagrees with {} annotations",
                self.id,
                self.annotations.len()
            )));
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.rgb.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.rgb.shape()[2]
    }

    /// Same observation with annotations removed.
    pub fn without_labels(&self) -> Self {
        Sample {
            annotations: Vec::new(),
            labelled: false,
            ..self.clone()
        }
    }

    /// Annotation centres, the locations that supervise the pose heads.
    pub fn centres(&self) -> Vec<(T, T)> {
        self.annotations.iter().map(|a| (a.x, a.y)).collect()
    }
}
