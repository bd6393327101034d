//! Everything around the algorithmic core that touches the outside world:
//! corpus and model file formats, parameter checkpoints, the HTTP service
//! with its correction store, and the `pico-extract` command line.

pub mod checkpoint;
pub mod demo;
pub mod cli;
mod error;
pub mod formats;
pub mod service;

pub use error::{Error, Result};
pub use pico_core as core;

/// Bundled toy medical graph (`#nodes`, `#edges`, `#aliases` sections).
pub const TOY_GRAPH: &str = include_str!("../data/toy_graph.tsv");
