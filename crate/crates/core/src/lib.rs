//! Desk-scale humor prediction for short Spanish-language texts.
//!
//! The pipeline mirrors a transfer-learning recipe for tweet classification
//! and regression: deterministic text cleanup, byte-pair-encoding subword
//! tokenization, a small QRNN language model whose encoder is transferred to
//! classifier/regressor heads, an NBSVM baseline, and a cross-validation plus
//! random-seed-search experiment harness.
//!
//! All numeric kernels are generic over the scalar type (`f32`/`f64`) via
//! [`Scalar`]; concrete aliases for the common instantiations live at the
//! crate root. Training runs in `f32`, gradient checking in `f64`.

pub mod baseline;
pub mod config;
pub mod corpus;
pub mod harness;
pub mod models;
pub mod neural;
pub mod resample;
pub mod rng;
pub mod scalar;
pub mod subword;
pub mod textclean;

pub use scalar::Scalar;









