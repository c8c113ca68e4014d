//! Desk-scale laboratory for studying how low-bit weight quantization interacts
//! with machine unlearning.
//!
//! The crate trains a small fact-memorization network, unlearns a designated
//! forget split with one of several methods, and measures whether simulated
//! INT4/INT8 quantization of the deployed weights restores the forgotten
//! content. Everything is 64-bit, seeded, and bit-reproducible.
//!
//! The crate is `no_std` + `alloc`; all IO, file formats, and the CLI live in
//! the companion `lethe-cli` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod attack;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod optim;
pub mod params;
pub mod quant;
pub mod rng;
pub mod tensor;
pub mod unlearn;

pub use error::{Error, Result};
pub use params::{ParamEntry, ParamKind, ParamSet};
pub use quant::{Granularity, QuantScope, QuantSpec, Rounding};
pub use tensor::Tensor;
