//! Robust MAP synchronization of over-complete scene-object predictions.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`). The aliases
//! below fix the scalar to `f64`; the `*32` variants use `f32`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod gmm;
pub mod hyperlearn;
pub mod io;
pub mod lbfgs;
pub mod likelihood;
pub mod metrics;
pub mod optimizer;
pub mod priors;
pub mod real;
pub mod relative;
pub mod rotation;
pub mod scene;
pub mod synthgen;

pub use error::{Error, Result};
pub use hyperlearn::{HyperLearnConfig, ValidationSet};
pub use likelihood::{HyperParams, PredictionBundle, RobustForm};
pub use optimizer::{OptimizeConfig, OptimizeReport};
pub use priors::{PriorFitConfig, PriorModel};
pub use real::Real;
pub use relative::{RelativeAttributes, RelativeTensor};
pub use scene::{ClassTable, ObjectAttributes, SceneLayout, SceneSlot};
pub use synthgen::{CorruptionConfig, GrammarConfig};

pub type Scene = SceneLayout<f64>;
pub type Attributes = ObjectAttributes<f64>;
pub type Edges = RelativeTensor<f64>;
pub type Predictions = PredictionBundle<f64>;
pub type Priors = PriorModel<f64>;
pub type Hyper = HyperParams<f64>;
pub type Report = OptimizeReport<f64>;
pub type Validation = ValidationSet<f64>;

pub type Scene32 = SceneLayout<f32>;
pub type Edges32 = RelativeTensor<f32>;
pub type Predictions32 = PredictionBundle<f32>;
pub type Priors32 = PriorModel<f32>;
pub type Hyper32 = HyperParams<f32>;
