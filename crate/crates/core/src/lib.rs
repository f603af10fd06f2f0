//! Head-conditioned local LoRA (HCLoRA) and the out-of-cone (OOC) penalty for
//! gaze following, on a small frozen transformer over synthetic scenes.

pub mod adapter;
pub mod autograd;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod optim;
pub mod params;
pub mod render;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
