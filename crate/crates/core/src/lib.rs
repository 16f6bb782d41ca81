//! Vegetation-condition forecasting pipeline.
//!
//! Takes raw per-pixel NDVI observation streams through weekly compositing,
//! gap-filling and smoothing, drought-index construction (VCI, VCI3M, NDVI
//! anomaly), Gaussian-process and autoregressive forecasting, and forecast
//! skill evaluation (ROC curves, hit/false-alarm rates, RMSE breakdowns),
//! plus an inter-region Granger analysis.

pub mod ar;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod gapfill;
pub mod gp;
pub mod indices;
pub mod ingest;
pub mod pipeline;
pub mod series;
pub mod synth;
pub mod time;

pub use error::{Error, Result, SkipReason};
