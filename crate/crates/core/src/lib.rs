//! Intrinsic image decomposition driven by pairwise relative-reflectance scores.
//!
//! The crate is organised as a pipeline: pairwise judgments ([`annotations`]),
//! pair scorers ([`scorer`]), a global ordering solver ([`ordering`]), a
//! low-rank approximation of the dense comparison matrix ([`nystrom`]),
//! mean-field inference ([`crf`]), the alternating decomposition
//! ([`decompose`]) and evaluation ([`metrics`]). [`fixtures`] builds synthetic
//! scenes with known factors and [`cli`] wires everything to the `intrinsic`
//! binary.

pub mod annotations;
pub mod cli;
pub mod crf;
pub mod decompose;
pub mod error;
pub mod fixtures;
pub mod imaging;
pub mod kernel;
pub mod metrics;
pub mod nystrom;
pub mod ordering;
pub mod scorer;
pub mod storage;

pub use error::{Error, Result};
