//! Disentangled multi-dimensional music similarity.
//!
//! Audio excerpts are turned into three aligned inputs (log-mel, cyclic
//! tempogram, CENS chroma), embedded by a masked single- or multi-branch
//! Inception network trained with per-dimension conditional triplet losses,
//! and scored on similarity triplets over any subset of the six dimensions
//! (genre, mood, instrument, era, tempo, key).

pub mod corpus;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod model;
pub mod similarity;
pub mod store;
pub mod training;
pub mod triplets;

pub use error::{Error, Result};
pub use similarity::Dimension;
