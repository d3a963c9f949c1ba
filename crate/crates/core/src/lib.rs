//! Airway-tree shape phenotyping.

pub mod autoenc;
pub mod cluster;
pub mod evalmetrics;
pub mod image;
pub mod pipeline;
pub mod scalar;
pub mod seed;
pub mod skel2d;
pub mod synthtree;
pub mod voxform;

pub use scalar::Scalar;

pub type Autoencoder32 = autoenc::Autoencoder<f32>;
pub type Autoencoder64 = autoenc::Autoencoder<f64>;
