//! Material style-transfer augmentation for patch-based fingerprint spoof
//! detection.

pub mod error;
pub mod image_ops;
pub mod prep;
pub mod umt;
pub mod data;
pub mod classifier;
pub mod eval;

pub use error::{Result, UmtError};
