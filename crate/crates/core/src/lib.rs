//! GAP-headed regression convolutional networks with regression activation
//! maps (RAM) for graded retinal images.
//!
//! The last convolutional layer's `K` feature maps `g_k` are summed into
//! `t_k`, a single dense unit produces `ŷ = Σ_k w_k t_k + b`, and the map
//! `G(i,j) = Σ_k w_k g_k(i,j)` attributes the prediction to image regions
//! (`Σ G = ŷ − b`).

pub mod dataio;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod network;
pub mod ram;
pub mod seed;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
