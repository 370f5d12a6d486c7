//! Key-phrase and relation extraction with voting ensembles of stacked
//! bidirectional LSTM taggers trained on a soft-F1 loss.

pub mod cli;
pub mod config;
pub mod data_io;
pub mod encoding;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod loss;
pub mod nn;
pub mod pipeline;
pub mod relations;
pub mod tagger;
pub mod train;

pub use error::{Error, Result};
