pub mod cli;
pub mod container;
pub mod data;
pub mod error;
pub mod frontend;
pub mod metrics;
pub mod model;
pub mod nncore;
pub mod presets;
pub mod synth;
pub mod training;
pub mod tuning;

pub use error::{CcatError, Result};
