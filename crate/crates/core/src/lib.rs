//! Selective classification for herbarium phenology: confidence thresholds,
//! accuracy/coverage curves and the day-of-year analyses built on them.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chart;
pub mod engine;
pub mod ingest;
pub mod model;
pub mod phenology;
pub mod stats;
pub mod synth;
pub mod cli;
