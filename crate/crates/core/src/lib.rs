//! Dense colored facial point clouds from a single RGB-D frame.
//!
//! The pipeline registers color onto depth, back-projects the depth pixels,
//! crops to the detected face and keeps the k-means cluster under the face
//! center. The surviving seeds are densified with a Gaussian RBF height field
//! evaluated on a regular grid.

pub mod detect;
pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod neighbors;
pub mod pipeline;
pub mod rbf;
pub mod segment;
pub mod synth;

pub use error::{Error, Result};
