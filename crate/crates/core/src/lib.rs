pub mod bench;
pub mod counter;
pub mod diff;
pub mod error;
pub mod eval;
pub mod graph;
pub mod gsc;
pub mod instances;
pub mod model;
pub mod optim;
pub mod overlap;
pub mod regression;
pub mod sparsevd;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
