//! Desk-scale tri-modal (sketch + text -> image) fine-grained retrieval
//! training pipeline.
//!
//! The library covers the full loop: synthetic tri-modal datasets with
//! built-in sketch/text complementarity, two-layer encoders with analytic
//! backprop, curriculum noise injection, an additive angular margin loss over
//! learnable class centers, symmetric InfoNCE and hardest-negative triplet
//! losses, a staged freeze/unfreeze training schedule, and exhaustive
//! cosine-similarity retrieval with Recall@K evaluation.
//!
//! See the crate examples for one runnable program per capability, or the
//! `stbir` binary for the command-line interface.

pub mod checkpoint;
pub mod ckfso;
pub mod cldre;
pub mod config;
pub mod datamodel;
pub mod encoders;
pub mod error;
pub mod losses;
pub mod mcfa;
pub mod report;
pub mod retrieval;

pub use error::{Result, StbirError};
