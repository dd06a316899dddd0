//! Reflectance-map rendering, coordinate-scheduled multi-object diffusion and
//! ambiguity-aware illumination scoring.
//!
//! `no_std` + `alloc`. File formats, the command line and thread pools live in
//! the companion `refmap` crate.
#![no_std]

extern crate alloc;

pub mod brdf;
pub mod diffusion;
pub mod envmap;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod image;
pub mod metrics;
pub mod render;
pub mod rng;
pub mod scene;
pub mod sh;

pub use error::{Error, Result};
