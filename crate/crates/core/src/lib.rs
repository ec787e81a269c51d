//! Spherical word/document embeddings with update training.
//!
//! Words and documents live together on the unit hypersphere and are trained
//! jointly with max-margin cosine losses. The crate adds what plain joint
//! training lacks for domain adaptation: drift diagnostics that expose the
//! slow global rotation of the embedding space, an SVD-based counter-rotation
//! onto a reference epoch, and two update-training strategies (keyword
//! compression and constructed document vectors) evaluated against a
//! skip-gram baseline with a kNN / macro-F1 harness.

#![allow(clippy::needless_range_loop)]

pub mod adapt;
pub mod baseline;
pub mod bundle;
pub mod corpus;
pub mod eval;
pub mod error;
pub mod geometry;
pub mod jose;
pub mod rng;

mod hogwild;

pub(crate) mod textfmt {
    /// Formats with 17 significant digits, enough for exact f64 round-trips.
    pub fn f64_17(x: f64) -> String {
        format!("{x:.16e}")
    }

}

pub use error::{Error, Result};
