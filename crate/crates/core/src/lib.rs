//! Modality-routed scene captioning and trajectory planning on a synthetic
//! off-road benchmark.

pub mod config;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod hash;
pub mod heads;
pub mod labeler;
pub mod model;
pub mod moro;
pub mod run;
pub mod seed;
pub mod sim;
pub mod trainer;
pub mod vocab;

pub use error::{Error, Result};
