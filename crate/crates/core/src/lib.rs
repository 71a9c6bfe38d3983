//! Spectral and localization analysis of random radial tree graphs through
//! their reduction to weighted half-line operators and SL(2) transfer matrices.

pub mod decoration;
pub mod error;
pub mod halfline;
pub mod lyapunov;
pub mod models;
mod quad;
pub mod sl2;
pub mod spectrum;

pub use error::{Error, Result};
pub use models::{Model, ModelConfig, ModelKind, OmegaStream};
pub use sl2::{Mat2, SpectralParam, C64};
