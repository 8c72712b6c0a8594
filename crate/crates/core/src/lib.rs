//! Selection-based graph convolution.
//!
//! Pretrained 2D convolution weights are transferred onto graphs whose edges
//! are labelled by spatial direction, so an ordinary CNN can run on
//! panoramas, cube-map spheres, superpixels, masked images and mesh texture
//! atlases.

pub mod builders;
pub mod error;
pub mod graph;
pub mod layers;
pub mod model_io;
pub mod numerics;
pub mod oracle;
pub mod pipeline;
pub mod verify;

pub use error::{Error, Result};
