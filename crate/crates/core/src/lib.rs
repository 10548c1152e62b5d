pub mod adam;
pub mod checkpoint;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod explain;
pub mod gcn;
pub mod metrics;
pub mod seeds;
pub mod synth;
pub mod tgam;
pub mod topology;
pub mod train;

pub use error::{Error, Result};
