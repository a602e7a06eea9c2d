//! Audit engine that measures whether a vision-language benchmark can be
//! solved from isolated image regions instead of whole-image understanding.
//!
//! The pipeline loads a benchmark manifest, queries a model on every full
//! image and on every patch of one or more n x n grids, scores the answers,
//! and compares full-image performance (FIP) against the mean of per-item
//! best-patch scores (MPP). The region comprehension index
//!
//! ```text
//! RCI = 1 - MPP / FIP
//! ```
//!
//! summarizes the gap: negative values mean single patches outperform the
//! full image (the benchmark rewards localized reasoning), positive values
//! mean the full image is required.

pub mod client;
pub mod engine;
pub mod grid;
pub mod heatmap;
pub mod manifest;
pub mod matrix;
pub mod pipeline;
pub mod reference;
pub mod report;
pub mod scoring;
pub mod spatial;
pub mod synth;
