//! File formats, parallel drivers and the `eqnet` command line on top of
//! `eqnet-core`.

pub mod checkpoint;
pub mod config_io;
pub mod dataset_io;
pub mod error;
pub mod evaluate;
pub mod fsutil;
pub mod graph_io;
pub mod manifest;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
