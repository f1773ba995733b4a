//! Cooperative multi-base-station OFDM sensing: per-BS range-angle maps,
//! soft-map fusion, CNN target classification, class-adaptive clustering
//! and multi-target tracking with GM-PHD and MBM filters.

pub mod classifier;
pub mod clustering;
pub mod config;
pub mod error;
pub mod fusion;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod radio;
pub mod rng;
pub mod scenario;
pub mod sensing;
pub mod tracking;

pub use error::{Error, Result};
