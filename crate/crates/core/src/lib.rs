//! Algorithmic core of the step-wise PICO disease-entity extraction pipeline.
//!
//! The crate is `no_std` (it only needs `alloc`). Everything here is a pure
//! function of explicit inputs: sentence classification, BiLSTM-CRF disease
//! tagging, DeepWalk graph embeddings, the probability/rule fusion that maps
//! entities onto P or O, and the evaluation metrics. File formats, the HTTP
//! service and the command line live in the `pico-extract` crate.
#![no_std]

extern crate alloc;

pub mod corpus;
pub mod crf;
pub mod dner;
mod error;
pub mod evalmetrics;
pub mod fixtures;
pub mod kgraph;
pub mod mapping;
pub mod numerics;
pub mod pico;
pub mod seqmodels;

pub use error::{Error, Result};
