//! Spatio-temporal forecasting of daily EV charging demand.
//!
//! The crate is organised as a pipeline:
//!
//! * [`ingest`] turns raw charging transactions into a gap-free daily
//!   demand panel (dates × stations).
//! * [`topology`] builds the two spatial views of the stations: a
//!   Haversine-weighted graph with its normalized adjacency, and a raster
//!   grid series.
//! * [`numerics`] is the dense-array / reverse-mode gradient substrate with
//!   parameter storage, Adam/SGD and a finite-difference gradient checker.
//! * [`models`] holds the forecasters: GCN layers, T-GCN, CNN, CNN+LSTM,
//!   and the AR/VAR least-squares baselines.
//! * [`training`] builds supervised windows, scales data, and runs the
//!   full-batch optimisation loop.
//! * [`eval`] aggregates forecasts to the total system, scores RMSE and
//!   runs the multi-seed experiment grid.
//!
//! Data-parallel loops (per-chunk gradient evaluation, seed and
//! model/horizon sweeps) go through [`exec`], which uses rayon when the
//! `parallel` feature is enabled and falls back to plain iteration
//! otherwise. Results are bit-identical in both modes.

pub mod error;
pub mod eval;
pub mod exec;
pub mod ingest;
pub mod models;
pub mod numerics;
pub mod synthetic;
pub mod topology;
pub mod training;

pub use error::{Error, Result};
