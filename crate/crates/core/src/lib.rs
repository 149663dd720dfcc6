//! Dual-assignment semi-supervised table detection at desk scale.
//!
//! The crate wires together Hungarian one-to-one matching, one-to-many matching
//! over replicated targets, pseudo-label filtering, an EMA teacher/student loop
//! around a tiny linear grid detector, and COCO-style evaluation. Synthetic
//! document scenes stand in for page images so every run finishes in seconds.

pub mod augment;
pub mod cli;
pub mod data;
pub mod detector;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod losses;
pub mod matching;
pub mod pseudo;
pub mod rng;
pub mod simloop;

pub use error::{Error, Result};
pub use geometry::{BBox, GroundTruthBox, Prediction};
pub use matching::{Assignment, CostMatrix, MatchWeights};
