//! Semantics-free document benchmarks and decoupled OCR evaluation for
//! visual-text compression.

pub mod config;
pub mod corpus;
pub mod error;
pub mod font;
pub mod harness;
pub mod layout;
pub mod metrics;
pub mod perturb;
pub mod pipeline;
pub mod render;
pub mod rng;
pub mod synth;
pub mod zerotext;

pub use error::{Error, Result};
