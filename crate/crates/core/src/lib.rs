//! Multi-scale spatial temporal graph convolution networks (MST-GCN) for
//! skeleton-based action recognition.
pub mod blocks;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod network;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
