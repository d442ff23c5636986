pub mod assoc;
pub mod cohort;
pub mod concept;
pub mod error;
pub mod pipeline;
pub mod ingest;
pub mod predict;
pub mod proto;
pub mod seed;
pub mod signal;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use signal::Signal;
