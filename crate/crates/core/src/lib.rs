//! Time-of-flight depth denoising with ray-aligned point convolutions.
//!
//! The pipeline runs from raw AMCW correlation taps ([`signal`]) through a
//! ray-anchored point cloud ([`geometry`]) and the point convolutions of
//! [`pointconv`] into the coarse-fine network of [`net`], trained and
//! domain-adapted by [`train`]. [`datagen`] produces synthetic multi-path
//! scenes and [`io`] holds the on-disk formats.

pub mod datagen;
pub mod error;
pub mod geometry;
pub mod io;
pub mod net;
pub mod pointconv;
pub mod signal;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{GradSlot, Real, Tensor};
