pub mod adapt;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod geometry;
pub mod model;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};

/// Single-precision instantiations used by the command-line tools.
pub type Tensor32 = autodiff::Tensor<f32>;
pub type Params32 = autodiff::ParamStore<f32>;
pub type Sample32 = data::Sample<f32>;
pub type GraspRect32 = geometry::GraspRect<f32>;
pub type Detection32 = model::Detection<f32>;
