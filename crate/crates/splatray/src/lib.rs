//! Sorting-free stochastic ray tracing for 3D Gaussian splatting scenes.
//!
//! Scenes are clouds of translucent anisotropic Gaussians composited by
//! alpha blending. Instead of sorting every intersected Gaussian per ray,
//! this crate renders and differentiates them with unbiased Monte Carlo
//! estimators that select a small sampled subset per ray:
//!
//! - [`blend`] — the exact sorted oracle, the stochastic forward estimator
//!   and binary shadow-ray transmittance;
//! - [`grad`] — unbiased pixel-color gradient estimation, chain rule down
//!   to all Gaussian parameters, and a finite-difference checker;
//! - [`relight`] — per-Gaussian reflectance shading under point,
//!   directional and environment lights with ray-traced shadows;
//! - [`optim`] — the two-pass reconstruction pipeline (render + index
//!   sampling forward, gradient replay backward) with an Adam-style
//!   optimizer;
//! - [`scene_io`] — JSON scene files, float-CSV images and training
//!   datasets.
//!
//! Everything is deterministic under a fixed seed, including across thread
//! counts; see [`rng`] for the keyed-stream scheme that makes this hold.
//!
//! The `examples/` directory is the best starting point: each example is a
//! runnable walkthrough of one capability.

pub mod blend;
pub mod bvh;
pub mod camera;
pub mod cli;
pub mod error;
pub mod gaussian;
pub mod grad;
pub mod image;
pub mod math;
pub mod optim;
pub mod relight;
pub mod render;
pub mod rng;
pub mod scene;
pub mod scene_io;
pub mod scenes;

pub use error::{Error, Result};
