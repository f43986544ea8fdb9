//! Hierarchical hyperbolic descriptors for panorama place recognition.
//!
//! Panoramas become trees of Poincaré-ball descriptors (one global point at
//! the root, progressively narrower views below it); perspective queries are
//! single ball points matched coarse-to-fine against those trees.

pub mod error;
pub mod hierarchy;
pub mod hypgeo;
pub mod index;
pub mod losses;
pub mod synth;
pub mod verify;
pub mod viz;

pub use error::{Error, Result};
