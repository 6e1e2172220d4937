//! Document-level relation extraction with hierarchical inference.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`] — dense f64 tensors with tape-based reverse-mode
//!   differentiation and a finite-difference gradient oracle.
//! * [`layers`] — embedding tables, BiLSTM, additive attention pooling,
//!   feed-forward nets, a bi-affine pairing layer, and inverted dropout.
//! * [`corpus`] — DocRED-schema ingestion, vocabularies, candidate-pair
//!   enumeration, and a deterministic synthetic corpus generator.
//! * [`model`] — the hierarchical inference model: entity-, sentence- and
//!   document-level inference with ablation switches.
//! * [`train`] — BCE training with Adam and deterministic batching.
//! * [`eval`] — confidence-threshold selection, F1 / Ign F1 scoring and the
//!   recall-by-evidence report.
//! * [`checkpoint`] — bit-exact parameter serialization.
//!
//! With the default `parallel` feature, per-document work inside a batch and
//! evaluation scoring fan out over rayon; results are merged in a fixed order
//! so outputs are bit-identical to the sequential fallback.

pub mod ablate;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod exec;
pub mod layers;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::HinError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, HinError>;
