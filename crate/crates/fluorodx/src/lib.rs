pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod explain;
pub mod io;
pub mod pipeline;
pub mod roi;
pub mod service;
pub mod synth;
pub mod train;
pub mod zoo;

pub use error::{Error, Result};
