//! Label-anchored supervised contrastive learning for text classification.

#![allow(clippy::needless_range_loop)]

pub mod checkpoint;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod losses;
pub mod math;
pub mod model;
pub mod sweep;
pub mod trainer;

pub use error::{Error, NormSite, Result};
pub use math::Matrix;
pub use model::Model;
