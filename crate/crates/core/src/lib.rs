//! Photon-counting quantum reading.
//!
//! A memory cell stores a bit in one of two lossy channels `τ0 < τ1`. This
//! crate computes how well a photon-counting receiver with a maximum-likelihood
//! decision reads that bit, for coherent (Poisson) transmitters and for
//! two-mode squeezed vacuum (TMSV) transmitters with idler reference, and
//! compares the result with classical benchmarks through the information gain.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![cfg_attr(test, allow(clippy::excessive_precision))]

pub mod bounds;
pub mod channel;
pub mod decision;
pub mod dist;
pub mod error;
pub mod gaussian;
pub mod numeric;
pub mod simulate;
pub mod special;
pub mod sweep;
pub mod validate;

pub use channel::{Bit, CellPair, Copies, DetectionModel, NoiseKind, SourceKind, SourceSpec};
pub use error::{Error, Result};
