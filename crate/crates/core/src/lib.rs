//! Dense video captioning on synthetic episodes: event proposals, pointer-network
//! event-sequence selection and context-aware sequential captioning.

pub mod config;
pub mod epn;
mod error;
pub mod dumps;
pub mod esgn;
pub mod interval;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod run;
pub mod scn;
pub mod synthdata;
pub mod training;

pub use error::{Error, Result};
pub use interval::{tiou, Interval};
