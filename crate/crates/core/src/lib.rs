//! Chart model, token codec, audio features, evaluation metrics and corpus
//! tooling for 4-key rhythm game chart generation.

pub mod cchart;
pub mod chart;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod osu;
pub mod sm;
pub mod synth;
pub mod tempo;
pub mod tokens;
pub mod wav;

#[cfg(test)]
mod testutil;

pub use chart::{Chart, ChartEvent, EventKind, KEYS, TICKS_PER_BEAT};
pub use error::*;
pub use tempo::{TempoMap, TimingSection};
