//! Glyph-image rendering with pixel-wise sampling and multi-scale style fusion.

pub mod autodiff;
pub mod checks;
pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod musf;
pub mod ops;
pub mod params;
pub mod pixamp;
pub mod pixymod;
pub mod reference;
pub mod renderer;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use renderer::{RenderConfig, RenderModel, Variant};
pub use tensor::{Real, Tensor};
