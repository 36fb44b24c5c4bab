//! Core library for `percept-forge`: image/manifest ingestion, no-reference
//! quality scorers, metric-vs-human alignment analysis, quality-weighted
//! ground-truth sampling policies, and a small direct-optimization SR lab.

pub mod analysis;
pub mod corpus;
pub mod sampling;
pub mod scorers;
pub mod tinysr;
pub mod util;
