//! Visual geometric skill imitation.
//!
//! Infers which geometric feature association (point-to-point, point-to-line,
//! line-to-line, point-to-conic) a single demonstration is about, by training a
//! permutation-invariant message-passing network to select the association
//! whose error trace looks like a good control signal. The selected error is
//! then servoed to zero with an image-based or uncalibrated visual servo.
//!
//! All numeric code is generic over [`Real`] (`f32` or `f64`). The `*64` / `*32`
//! aliases below name the common instantiations.

// `!(x > 0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod geometry;
pub mod linalg;
pub mod metrics;
pub mod neural;
pub mod scalar;
pub mod scene_sim;
pub mod servo;
pub mod trainer;

pub use geometry::{ErrorSignal, GeometryError, HomLine, ImagePoint, KernelKind};
pub use scalar::Real;

pub type ImagePoint64 = geometry::ImagePoint<f64>;
pub type ImagePoint32 = geometry::ImagePoint<f32>;
pub type ErrorSignal64 = geometry::ErrorSignal<f64>;
pub type DemoSequence64 = scene_sim::DemoSequence<f64>;
pub type DemoSequence32 = scene_sim::DemoSequence<f32>;
pub type NetParams64 = neural::NetParams<f64>;
pub type NetParams32 = neural::NetParams<f32>;
pub type TrainedKernel64 = trainer::TrainedKernel<f64>;
pub type TrainedKernel32 = trainer::TrainedKernel<f32>;
pub type EvalReport64 = metrics::EvalReport<f64>;
pub type Trajectory64 = servo::Trajectory<f64>;
pub type Matrix64 = linalg::Matrix<f64>;
