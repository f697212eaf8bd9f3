//! From-scratch transformer encoder-decoder for monocular 3D mesh recovery.
//!
//! The crate is organized around a minimal dense-tensor engine with
//! reverse-mode differentiation (`tensor`), mesh topology utilities that
//! derive attention masks and upsampling matrices (`mesh`, `sparse`), the
//! network itself (`model`), training objectives and evaluation metrics
//! (`losses`, `metrics`), and a synthetic-data training harness (`data`).

pub mod blockfile;
pub mod data;
pub mod error;
pub mod losses;
pub mod mesh;
pub mod metrics;
pub mod model;
pub mod sparse;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
