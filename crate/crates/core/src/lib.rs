//! Occlusion-aware pedestrian trajectory prediction on spatio-temporal
//! graphs that mix pedestrians with static obstacles.

pub mod cluster;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod graph;
pub mod metrics;
pub mod network;
pub mod occupancy;
pub mod predictor;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
