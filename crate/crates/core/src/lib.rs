//! Vessel-oriented filtering toolkit.
//!
//! A desk-scale pipeline for tubular-structure segmentation in dense 3D
//! volumes: synthetic tube phantoms with analytic ground truth, centerline
//! extraction and per-voxel orientation fields, oriented Gaussian filter
//! banks with a probability-gated data selector, and two micro
//! encoder-decoder networks (orientation estimation, segmentation) trained
//! with hand-derived gradients.
//!
//! Everything is deterministic: a fixed seed and fixed inputs reproduce
//! byte-identical outputs regardless of worker thread count.

pub mod config;
pub mod error;
pub mod filter;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod orient;
pub mod patch;
pub mod phantom;
pub mod rng;
pub mod skeleton;
pub mod vec3;
pub mod volume;
pub mod vvol;

pub use error::{Error, Result};
pub use volume::{Plane, Volume, VolumeKind, PLANES};

/// Caps the global worker pool. Call once at process start; returns an error
/// if a pool was already initialized. All parallel loops are written so that
/// outputs do not depend on the thread count.
pub fn init_threads(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}
