//! Data-free transferable targeted attacks.
//!
//! The crate is generic over the floating-point [`Scalar`] (`f32` or `f64`);
//! the aliases below pin the common choices.

pub mod analysis;
pub mod attack;
pub mod error;
pub mod estimators;
pub mod image;
pub mod nn;
pub mod ops;
pub mod rng;
pub mod s4st;
pub mod scalar;
pub mod transform;
pub mod transform_kit;

pub use attack::{tmi_attack, AttackConfig, AttackResult, LossKind};
pub use error::{Error, Result};
pub use image::Image;
pub use nn::{Classifier, Network};
pub use rng::RngState;
pub use s4st::S4STParams;
pub use scalar::Scalar;
pub use transform::{parse_transform, InputTransform};
pub use transform_kit::{IntensityGrid, TransformKind, TransformVariant};

pub type Image32 = Image<f32>;
pub type Image64 = Image<f64>;
pub type Network32 = Network<f32>;
pub type Network64 = Network<f64>;
pub type AttackResult32 = AttackResult<f32>;
