//! Depth completion with a spatial and channel attention enhancer.
//!
//! The crate is self-contained: a small reverse-mode tensor engine
//! ([`tensor`]), the spatial and channel enhancer ([`enhancer`]), a coarse-to-fine
//! completion network ([`network`]), synthetic LiDAR-style data
//! ([`data`]), the masked training objective with Adam ([`train`]),
//! finite-difference gradient checks ([`gradcheck`]) and KITTI-style
//! metrics ([`metrics`]).

pub mod archive;
pub mod data;
pub mod enhancer;
pub mod error;
pub mod gradcheck;
pub mod kv;
pub mod metrics;
pub mod network;
pub mod params;
pub mod pipeline;
pub mod registry;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Gradients, Tape, Tensor, Var};
