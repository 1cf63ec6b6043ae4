//! Articulated object reconstruction from two-state RGB-D observations.
//!
//! Canonical Gaussian primitives carry part-weight logits; a small set of
//! global rigid motion bases, blended per primitive, moves them between the
//! two observed joint states. Training runs warm-up, soft blending and hard
//! assignment stages, after which each movable basis is decomposed into a
//! revolute or prismatic joint.

pub mod check;
pub mod corr;
pub mod error;
pub mod eval;
pub mod frame;
pub mod geom;
pub mod grid;
pub mod hungarian;
pub mod io;
pub mod loss;
pub mod motion;
pub mod pipeline;
pub mod seg;
pub mod spatial;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
